//! Decision-region maps of O, Q and S on one shared Rademacher plane.

use hce::nn::{train_baseline, NetworkSpec, SyntheticConfig, TrainConfig};
use hce::prune::{compact, iterative_prune, Granularity, SparsitySchedule};
use hce::quant::{quantize_model, QuantConfig};
use hce::region::{comparison_image, compute_grid, export_grid, Plane};
use hce::Tensor;

fn main() -> hce::Result<()> {
    let (train, test) = SyntheticConfig {
        num_classes: 10,
        input_shape: [3, 8, 8],
        train_size: 1000,
        test_size: 100,
        noise: 1.5,
        components_per_class: 2,
        seed: 3,
    }
    .generate()?;
    let spec = NetworkSpec::plain(8, 10, [3, 8, 8]).with_width(0.5);
    let (o, _) = train_baseline(&spec, &train, &TrainConfig { epochs: 4, ..Default::default() })?;
    let q = quantize_model(&o, &train, &QuantConfig::bits(3, 3))?;
    let schedule = SparsitySchedule { target_keep_ratio: 0.5, steps: 1, finetune_epochs_per_step: 0, granularity: Granularity::Filter };
    let pruned = iterative_prune(&o, &schedule, |_, _, _, _| Ok(()))?;
    let (s, _) = compact(&pruned.store, &pruned.mask)?;

    let center = Tensor::new(vec![3, 8, 8], test.inputs.row(0).to_vec())?;
    let plane = Plane::random(&center, 0, 20.0, 41)?;
    let grids = [compute_grid(&o, &plane)?, compute_grid(&q, &plane)?, compute_grid(&s, &plane)?];
    let dir = std::env::temp_dir().join("hce_regions");
    for (name, g) in ["o", "q", "s"].iter().zip(&grids) {
        let files = export_grid(g, &dir, name, 4)?;
        println!("{name}: roughness {} -> {}", g.roughness(), files.image.display());
    }
    let refs: Vec<_> = grids.iter().collect();
    comparison_image(&refs, 4)?.save(dir.join("comparison.png"))?;

    let other = Plane::random(&center, 1, 20.0, 41)?;
    let mismatched = compute_grid(&o, &other)?;
    println!("mismatched plane rejected: {}", comparison_image(&[&grids[0], &mismatched], 4).is_err());
    Ok(())
}
