//! L1 filter pruning with compaction, and global unstructured magnitude pruning.

use hce::cost::CostReport;
use hce::nn::{build_model, forward, NetworkSpec};
use hce::prune::{compact, iterative_prune, zero_fraction, Granularity, SparsitySchedule};
use hce::Tensor;

fn main() -> hce::Result<()> {
    let spec = NetworkSpec::residual(20, 10, [3, 16, 16]);
    let model = build_model(&spec, 0)?;
    let no_finetune = |_: &mut _, _: &_, _, _| Ok(());

    let filters = SparsitySchedule { target_keep_ratio: 0.5, steps: 2, finetune_epochs_per_step: 0, granularity: Granularity::Filter };
    let out = iterative_prune(&model, &filters, no_finetune)?;
    for entry in &out.log {
        println!("step {} keep {:.2}: {} filters kept", entry.step, entry.keep_ratio, entry.kept.values().sum::<usize>());
    }
    let (small, small_spec) = compact(&out.store, &out.mask)?;
    let x = Tensor::filled(&[2, 3, 16, 16], 0.1);
    let diff = forward(&out.store, &x)?.max_abs_diff(&forward(&small, &x)?);
    println!("masked vs compacted max |diff| = {diff:.2e}");
    println!("params {} -> {}", model.param_count(), small.param_count());
    let base = CostReport::float("dense", &spec)?;
    let pruned = CostReport::float("compacted", &small_spec)?.with_baseline(&base);
    println!("FLOPs ratio {:.3}", pruned.ratio().unwrap_or(1.0));

    let weights = SparsitySchedule { granularity: Granularity::Weight, steps: 1, ..filters };
    let out = iterative_prune(&model, &weights, no_finetune)?;
    let keys: Vec<String> = out.mask.layers.keys().cloned().collect();
    println!("unstructured: {:.3} of prunable weights are zero", zero_fraction(&out.store, &keys));
    Ok(())
}
