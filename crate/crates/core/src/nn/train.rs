//! SGD training loop, baseline training and evaluation.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{Batch, Dataset};
use super::network::{backward, forward, forward_train, update_running_stats};
use super::spec::{NetworkSpec, CLASSIFIER};
use super::store::{build_model, Gradients, ParameterStore};
use crate::error::{Error, Result};
use crate::objective::cross_entropy;
use crate::tensor::{argmax, Tensor};

/// Anything that maps an input batch to per-class scores.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn input_shape(&self) -> [usize; 3];
    /// N×K scores; higher is more likely.
    fn scores(&self, inputs: &Tensor) -> Result<Tensor>;
    /// Identifies the weights behind the scores.
    fn fingerprint(&self) -> String;

    fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        let s = self.scores(inputs)?;
        Ok((0..s.rows()).map(|i| argmax(s.row(i))).collect())
    }
}

impl Classifier for ParameterStore {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }
    fn input_shape(&self) -> [usize; 3] {
        self.spec.input_shape
    }
    fn scores(&self, inputs: &Tensor) -> Result<Tensor> {
        forward(self, inputs)
    }
    fn fingerprint(&self) -> String {
        self.content_fingerprint()
    }
}

/// Scores for a whole tensor of inputs, evaluated in chunks.
pub fn scores_batched(model: &dyn Classifier, inputs: &Tensor, batch_size: usize) -> Result<Tensor> {
    let n = inputs.rows();
    let mut data = Vec::with_capacity(n * model.num_classes());
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        data.extend_from_slice(model.scores(&inputs.select_rows(chunk))?.data());
    }
    Tensor::new(vec![n, model.num_classes()], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// Indices of misclassified samples.
    pub error_set: BTreeSet<usize>,
    pub predictions: Vec<usize>,
}

pub const EVAL_BATCH: usize = 256;

/// Accuracy and error set; `accuracy = 1 − |error_set| / N`.
pub fn evaluate(model: &dyn Classifier, data: &Dataset) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    if model.input_shape() != data.sample_shape() {
        return Err(Error::input(format!(
            "model expects inputs {:?}, dataset has {:?}",
            model.input_shape(),
            data.sample_shape()
        )));
    }
    let mut predictions = Vec::with_capacity(data.len());
    for batch in data.batches(EVAL_BATCH) {
        predictions.extend(model.predict(&batch.inputs)?);
    }
    Ok(eval_from_predictions(predictions, &data.labels))
}

pub fn eval_from_predictions(predictions: Vec<usize>, labels: &[usize]) -> EvalResult {
    let error_set: BTreeSet<usize> =
        predictions.iter().zip(labels).enumerate().filter(|(_, (p, y))| p != y).map(|(i, _)| i).collect();
    let accuracy = 1.0 - error_set.len() as f64 / labels.len() as f64;
    EvalResult { accuracy, error_set, predictions }
}

/// Optimizer and schedule. Only determinism under a fixed seed is contractual;
/// the defaults are a reasonable small-scale recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by `lr_decay`.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn batch_size() -> usize {
        64
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        5e-4
    }
    pub fn lr_decay() -> f64 {
        0.1
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            momentum: defaults::momentum(),
            weight_decay: defaults::weight_decay(),
            lr_milestones: Vec::new(),
            lr_decay: defaults::lr_decay(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning_rate must be positive (got {})", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.lr_decay <= 0.0 {
            return Err(Error::config("momentum must lie in [0,1), weight_decay >= 0, lr_decay > 0"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.lr_decay.powi(decays as i32)
    }

    /// Shuffle seed for an epoch; independent streams per (seed, epoch).
    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
    }
}

/// Momentum SGD with decoupled handling of weight decay (applied to conv and
/// linear weights only).
#[derive(Debug, Default)]
pub struct Sgd {
    velocity: Gradients,
}

impl Sgd {
    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients, lr: f64, momentum: f64, weight_decay: f64) {
        for (name, g) in grads {
            let param = store.get_mut(name).expect("gradient for unknown parameter");
            let decay = if name.ends_with(".weight") { weight_decay } else { 0.0 };
            let v = self.velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for ((vv, gv), pv) in v.data_mut().iter_mut().zip(g.data()).zip(param.data_mut().iter_mut()) {
                *vv = momentum * *vv + gv + decay * *pv;
                *pv -= lr * *vv;
            }
        }
        store.step += 1;
    }
}

/// One optimizer step's record for the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub ce: f64,
    pub kl: f64,
    /// Weight on the KL term; 0 for plain cross-entropy training.
    pub kl_weight: f64,
    pub total: f64,
    pub batch_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// One JSON record per line: every step, then every epoch summary.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for s in &self.steps {
            writeln!(f, "{}", serde_json::to_string(&serde_json::json!({"kind": "step", "record": s}))?)?;
        }
        for e in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(&serde_json::json!({"kind": "epoch", "record": e}))?)?;
        }
        Ok(())
    }
}

/// Post-update hook, e.g. re-applying a prune mask.
pub type Constraint<'a> = &'a dyn Fn(&mut ParameterStore, &mut Gradients);

/// Per-batch loss: `(ce, kl, kl_weight, total, d total / d scores)`.
pub struct BatchLoss {
    pub ce: f64,
    pub kl: f64,
    pub kl_weight: f64,
    pub total: f64,
    pub grad: Tensor,
}

/// Runs `cfg.epochs` epochs of minibatch SGD. `loss` receives the batch scores,
/// the batch and the dataset indices of its samples. `constrain` runs after every
/// update (e.g. to keep pruned weights at zero).
pub fn train_epochs(
    store: &mut ParameterStore,
    data: &Dataset,
    cfg: &TrainConfig,
    mut loss: impl FnMut(&Tensor, &Batch, &[usize]) -> Result<BatchLoss>,
    constrain: Option<Constraint<'_>>,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let mut opt = Sgd::default();
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in data.batch_indices(cfg.batch_size, Some(cfg.epoch_seed(epoch))).iter().enumerate() {
            let batch = data.batch(idx);
            let (scores, tape) = forward_train(store, &batch.inputs)?;
            let out = loss(&scores, &batch, idx)?;
            if !out.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss: out.total });
            }
            let hits = (0..scores.rows()).filter(|&i| argmax(scores.row(i)) == batch.labels[i]).count();
            let mut grads = backward(store, &tape, &out.grad)?;
            if let Some(c) = constrain {
                c(store, &mut grads);
            }
            opt.step(store, &grads, lr, cfg.momentum, cfg.weight_decay);
            update_running_stats(store, &tape.batch_stats);
            if let Some(c) = constrain {
                c(store, &mut grads);
            }
            loss_sum += out.total * idx.len() as f64;
            correct += hits;
            log.steps.push(StepRecord {
                epoch,
                batch: b,
                lr,
                ce: out.ce,
                kl: out.kl,
                kl_weight: out.kl_weight,
                total: out.total,
                batch_accuracy: hits as f64 / idx.len() as f64,
            });
        }
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(log)
}

/// Plain cross-entropy loss for [`train_epochs`].
pub fn ce_loss(scores: &Tensor, batch: &Batch, _: &[usize]) -> Result<BatchLoss> {
    let (ce, grad) = cross_entropy(scores, &batch.labels)?;
    Ok(BatchLoss { ce, kl: 0.0, kl_weight: 0.0, total: ce, grad })
}

/// Trains the full-precision baseline from a fresh initialization seeded with `cfg.seed`.
pub fn train_baseline(spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig) -> Result<(ParameterStore, TrainingLog)> {
    spec.validate()?;
    if data.num_classes != spec.num_classes || data.sample_shape() != spec.input_shape {
        return Err(Error::input(format!(
            "dataset ({} classes, {:?}) does not match network ({} classes, {:?})",
            data.num_classes,
            data.sample_shape(),
            spec.num_classes,
            spec.input_shape
        )));
    }
    if data.distinct_labels() < spec.num_classes {
        return Err(Error::input(format!(
            "dataset has {} distinct labels, network has {} classes",
            data.distinct_labels(),
            spec.num_classes
        )));
    }
    let mut store = build_model(spec, cfg.seed)?;
    let log = train_epochs(&mut store, data, cfg, ce_loss, None)?;
    debug_assert!(store.get(&format!("{CLASSIFIER}.bias")).is_some());
    Ok((store, log))
}
