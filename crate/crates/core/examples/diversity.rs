//! Error-overlap statistics for two ensemble members.

use std::collections::BTreeSet;

use hce::ensemble::{diversity_report, ensemble_predict, error_sets, EnsembleMode, ErrorSets, MemberPredictions};
use hce::Tensor;

fn main() -> hce::Result<()> {
    // Counts reported for ResNet20 on CIFAR-10: |E_Q| = 1181, |E_S| = 654, |E_Q ∩ E_S| = 401.
    let quantized: BTreeSet<usize> = (0..1181).collect();
    let pruned: BTreeSet<usize> = (1181 - 401..1181 - 401 + 654).collect();
    let sets = ErrorSets { quantized, pruned, num_samples: 10_000, ..Default::default() };
    let r = diversity_report(&sets)?;
    println!("union {} intersection {} overlap {:.2}%", r.union, r.intersection, 100.0 * r.overlap_ratio);

    // Small worked example through the ensemble.
    let s = Tensor::new(vec![3, 2], vec![2.0, 0.0, 0.0, 1.0, 0.5, 0.0])?;
    let q = Tensor::new(vec![3, 2], vec![0.0, 0.5, 0.0, 2.0, 0.0, 3.0])?;
    let labels = [0, 1, 0];
    let argmax = |t: &Tensor| (0..t.rows()).map(|i| hce::tensor::argmax(t.row(i))).collect::<Vec<_>>();
    let ens = ensemble_predict(&s, &q, EnsembleMode::Probability)?;
    let sets = error_sets(
        MemberPredictions { quantized: &argmax(&q), pruned: &argmax(&s), baseline: &labels, ensemble: &ens },
        &labels,
    )?;
    print!("{}", diversity_report(&sets)?.venn_table());
    Ok(())
}
