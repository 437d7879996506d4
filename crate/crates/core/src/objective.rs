//! Diversity-aware training objective for the pruned ensemble member.
//!
//! ```text
//! p_k(x)  = exp(s_k/τ) / Σ_j exp(s_j/τ)
//! p_D     = p_O − p_Q
//! L_KL    = −τ² · mean_x Σ_k p_D,k · log p_S,k
//! loss(S) = α · CE(softmax(s_S), y) + (1 − α) · L_KL
//! ```
//!
//! `p_D` is signed and sums to zero per row, so `L_KL` is not a divergence and is
//! unbounded below in `p_S`. It is implemented as written; [`TargetMode::Clamped`]
//! swaps in the normalized positive part of `p_D` for comparison runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward, ParameterStore};
use crate::quant::{forward_quantized, QuantizedModel};
use crate::tensor::Tensor;

/// Floor applied to student probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// `p_O − p_Q`, used signed.
    #[default]
    Signed,
    /// `max(p_O − p_Q, 0)` renormalized to sum to one (all-zero rows stay zero).
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HceLossConfig {
    /// Weight of the cross-entropy term, in `[0, 1]`.
    pub alpha: f64,
    /// Softening temperature, `>= 1`.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub target_mode: TargetMode,
}

fn default_temperature() -> f64 {
    4.0
}

impl Default for HceLossConfig {
    fn default() -> Self {
        Self { alpha: 0.3, temperature: default_temperature(), target_mode: TargetMode::Signed }
    }
}

impl HceLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1] (got {})", self.alpha)));
        }
        check_temperature(self.temperature)
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 1.0) {
        return Err(Error::config(format!("temperature must be >= 1 (got {tau})")));
    }
    Ok(())
}

/// Temperature-softened softmax of one score vector.
pub fn soften(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::input("non-finite score passed to soften"));
    }
    Ok(softmax_row(scores, tau))
}

/// Row-wise [`soften`] over an N×K score matrix.
pub fn soften_rows(scores: &Tensor, tau: f64) -> Result<Tensor> {
    check_temperature(tau)?;
    if !scores.all_finite() {
        return Err(Error::input("non-finite score passed to soften"));
    }
    let k = scores.row_len();
    let data: Vec<f64> = scores.data().chunks(k).flat_map(|r| softmax_row(r, tau)).collect();
    Tensor::new(scores.shape().to_vec(), data)
}

fn softmax_row(scores: &[f64], tau: f64) -> Vec<f64> {
    let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = scores.iter().map(|s| ((s - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_softmax_row(scores: &[f64], tau: f64) -> Vec<f64> {
    let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let shifted: Vec<f64> = scores.iter().map(|s| (s - m) / tau).collect();
    let lse = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|v| v - lse).collect()
}

/// Softened probabilities of the baseline and quantized members and their signed difference.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTargets {
    pub p_o: Tensor,
    pub p_q: Tensor,
    pub p_d: Tensor,
}

impl DistillTargets {
    pub fn from_probabilities(p_o: Tensor, p_q: Tensor) -> Result<Self> {
        if p_o.shape() != p_q.shape() || p_o.shape().len() != 2 {
            return Err(Error::input(format!(
                "target probability shapes differ: {:?} vs {:?}",
                p_o.shape(),
                p_q.shape()
            )));
        }
        let data = p_o.data().iter().zip(p_q.data()).map(|(a, b)| a - b).collect();
        let p_d = Tensor::new(p_o.shape().to_vec(), data)?;
        Ok(Self { p_o, p_q, p_d })
    }

    /// Rows `indices` of every component.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            p_o: self.p_o.select_rows(indices),
            p_q: self.p_q.select_rows(indices),
            p_d: self.p_d.select_rows(indices),
        }
    }

    /// The distillation target under `mode`.
    pub fn target(&self, mode: TargetMode) -> Tensor {
        match mode {
            TargetMode::Signed => self.p_d.clone(),
            TargetMode::Clamped => {
                let k = self.p_d.row_len();
                let data = self
                    .p_d
                    .data()
                    .chunks(k)
                    .flat_map(|row| {
                        let pos: Vec<f64> = row.iter().map(|v| v.max(0.0)).collect();
                        let z: f64 = pos.iter().sum();
                        pos.into_iter().map(move |v| if z > 0.0 { v / z } else { 0.0 })
                    })
                    .collect();
                Tensor::new(self.p_d.shape().to_vec(), data).expect("same shape")
            }
        }
    }
}

/// Targets from the frozen baseline `o` and frozen quantized member `q`.
/// Both are borrowed immutably; nothing here can update them.
pub fn make_targets(o: &ParameterStore, q: &QuantizedModel, inputs: &Tensor, tau: f64) -> Result<DistillTargets> {
    if o.architecture_fingerprint() != q.grid_weights.architecture_fingerprint() {
        return Err(Error::input("baseline and quantized models do not share an architecture"));
    }
    let p_o = soften_rows(&forward(o, inputs)?, tau)?;
    let p_q = soften_rows(&forward_quantized(q, inputs)?, tau)?;
    DistillTargets::from_probabilities(p_o, p_q)
}

/// `−τ² · mean_rows Σ_k p_D,k · log p_S,k` with `p_S` floored at [`PROB_FLOOR`].
pub fn kl_term(p_d: &Tensor, p_s: &Tensor, tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    if p_d.shape() != p_s.shape() || p_d.shape().len() != 2 || p_d.rows() == 0 {
        return Err(Error::input(format!("kl_term shapes {:?} vs {:?}", p_d.shape(), p_s.shape())));
    }
    let mut sum = 0.0;
    for (d, p) in p_d.data().iter().zip(p_s.data()) {
        let floored = p.max(PROB_FLOOR);
        if !(p.is_finite() && *p >= 0.0 && floored > 0.0) {
            return Err(Error::Numeric(format!("student probability {p} is not a valid probability")));
        }
        sum += d * floored.ln();
    }
    let loss = -tau * tau * sum / p_d.rows() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("kl_term evaluated to {loss}")));
    }
    Ok(loss)
}

/// Mean negative log-likelihood of the true labels and its gradient w.r.t. the scores.
pub fn cross_entropy(scores: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = check_scores(scores, labels)?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &y) in scores.data().chunks(k).zip(labels) {
        let logp = log_softmax_row(row, 1.0);
        loss -= logp[y];
        grad.extend(logp.iter().enumerate().map(|(j, lp)| (lp.exp() - f64::from(j == y)) / n as f64));
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?))
}

fn check_scores(scores: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if scores.shape().len() != 2 || scores.rows() == 0 || scores.rows() != labels.len() {
        return Err(Error::input(format!("scores {:?} with {} labels", scores.shape(), labels.len())));
    }
    let k = scores.row_len();
    if labels.iter().any(|&y| y >= k) {
        return Err(Error::input(format!("label out of range for {k} classes")));
    }
    if !scores.all_finite() {
        return Err(Error::input("non-finite scores"));
    }
    Ok((scores.rows(), k))
}

/// Value of each loss component and the gradient of the total w.r.t. the student scores.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kl: f64,
    pub total: f64,
    pub grad: Tensor,
}

/// Total objective value.
pub fn hce_loss(scores: &Tensor, labels: &[usize], targets: &DistillTargets, cfg: &HceLossConfig) -> Result<f64> {
    hce_loss_with_grad(scores, labels, targets, cfg).map(|b| b.total)
}

pub fn hce_loss_with_grad(
    scores: &Tensor,
    labels: &[usize],
    targets: &DistillTargets,
    cfg: &HceLossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let (n, k) = check_scores(scores, labels)?;
    if targets.p_d.shape() != scores.shape() {
        return Err(Error::input(format!(
            "targets {:?} do not match scores {:?}",
            targets.p_d.shape(),
            scores.shape()
        )));
    }
    let (ce, ce_grad) = cross_entropy(scores, labels)?;
    let tau = cfg.temperature;
    let target = targets.target(cfg.target_mode);
    let log_floor = PROB_FLOOR.ln();
    let mut kl_sum = 0.0;
    let mut kl_grad = Vec::with_capacity(n * k);
    for (row, d) in scores.data().chunks(k).zip(target.data().chunks(k)) {
        let logp = log_softmax_row(row, tau);
        let active: Vec<f64> = logp.iter().map(|&l| f64::from(l > log_floor)).collect();
        let weighted: f64 = d.iter().zip(&active).map(|(dv, a)| dv * a).sum();
        for j in 0..k {
            kl_sum += d[j] * logp[j].max(log_floor);
            let p = logp[j].exp();
            kl_grad.push(-tau * (d[j] * active[j] - p * weighted) / n as f64);
        }
    }
    let kl = -tau * tau * kl_sum / n as f64;
    let alpha = cfg.alpha;
    let total = alpha * ce + (1.0 - alpha) * kl;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {total}")));
    }
    let grad: Vec<f64> =
        ce_grad.data().iter().zip(&kl_grad).map(|(c, q)| alpha * c + (1.0 - alpha) * q).collect();
    Ok(LossBreakdown { ce, kl, total, grad: Tensor::new(vec![n, k], grad)? })
}
