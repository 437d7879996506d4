//! The HCE objective on a hand-sized batch: cross-entropy plus a KL term toward
//! the signed gap between the full-precision and quantized predictions.

use hce::objective::{hce_loss_with_grad, soften, DistillTargets, HceLossConfig, TargetMode};
use hce::Tensor;

fn main() -> hce::Result<()> {
    let tau = 4.0;
    let o = [3.0, 1.0, 0.2];
    let q = [1.0, 2.0, 0.5];
    let p_o = soften(&o, tau)?;
    let p_q = soften(&q, tau)?;
    println!("p_O = {p_o:.4?}\np_Q = {p_q:.4?}");
    let targets = DistillTargets::from_probabilities(Tensor::new(vec![1, 3], p_o)?, Tensor::new(vec![1, 3], p_q)?)?;
    println!("p_D = {:.4?} (row sums to 0)", targets.p_d.data());

    let student = Tensor::new(vec![1, 3], vec![2.0, 0.5, 0.1])?;
    for alpha in [0.0, 0.3, 1.0] {
        for mode in [TargetMode::Signed, TargetMode::Clamped] {
            let cfg = HceLossConfig { alpha, temperature: tau, target_mode: mode };
            let b = hce_loss_with_grad(&student, &[0], &targets, &cfg)?;
            println!("alpha {alpha} {mode:?}: ce {:.4} kl {:.4} total {:.4} grad {:.4?}", b.ce, b.kl, b.total, b.grad.data());
        }
    }
    Ok(())
}
