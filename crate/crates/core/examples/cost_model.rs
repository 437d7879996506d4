//! MACs / BOPs / Float32-equivalent FLOPs for CIFAR ResNets and their compressed variants.

use hce::cost::{bops_of_quantized, count_macs, equivalent_flops, hce_cost, CostReport};
use hce::nn::NetworkSpec;
use hce::prune::kept_count;
use hce::quant::QuantConfig;

fn main() -> hce::Result<()> {
    for depth in [20, 56] {
        let spec = NetworkSpec::residual(depth, 10, [3, 32, 32]);
        let total: u64 = count_macs(&spec)?.iter().map(|(_, m)| m).sum();
        println!("ResNet{depth}: {total} MACs ({:.1}M FLOPs)", total as f64 / 1e6);
    }

    println!("1000 MACs at 3/3 bits: {} BOPs = {:.1} equivalent FLOPs", bops_of_quantized(1000, 3, 3)?, equivalent_flops(9000));

    let spec = NetworkSpec::residual(56, 10, [3, 32, 32]);
    let base = CostReport::float("resnet56", &spec)?;
    let q = CostReport::quantized("q3", &spec, &QuantConfig::bits(3, 3))?.with_baseline(&base);
    for keep in [0.75, 0.5, 0.48, 0.25] {
        let inner = spec.blocks().iter().map(|b| kept_count(keep, b.inner)).collect();
        let pruned = NetworkSpec { inner_widths: Some(inner), ..spec.clone() };
        let s = CostReport::float(format!("keep{keep}"), &pruned)?.with_baseline(&base);
        let h = hce_cost(&s, Some(&q), &base)?;
        println!(
            "keep {keep}: S {:.1}M ({:.1}%), Q {:.1}M, S+Q {:.1}M ({:.1}%)",
            h.pruned_equivalent_flops / 1e6,
            100.0 * h.pruned_only_ratio(),
            h.quantized_equivalent_flops / 1e6,
            h.total() / 1e6,
            100.0 * h.ratio()
        );
    }
    println!("\n{}", q.to_table().lines().next_back().unwrap_or_default());
    Ok(())
}
