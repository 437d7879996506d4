//! Structured (per-filter L1) and unstructured (per-weight magnitude) pruning.
//!
//! Structured pruning only removes output filters of the first conv in each
//! block. The block's second conv restores the block width, so residual
//! connections never change shape. Masked filters are zeroed together with their
//! batch-norm channel and the matching input channel of the second conv;
//! [`compact`] removes them physically.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::spec::{weight_key, BlockInfo};
use crate::nn::{NetworkSpec, ParameterStore};
use crate::tensor::Tensor;

/// Slack for `ceil(ratio · n)` so that e.g. `0.7 · 10` keeps 7, not 8.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Filter,
    Weight,
}

/// Keep (`true`) / drop decisions. Filter masks are keyed by conv layer name with
/// one entry per output filter; weight masks by parameter key with one entry per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub granularity: Granularity,
    pub layers: IndexMap<String, Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsitySchedule {
    pub target_keep_ratio: f64,
    #[serde(default = "one")]
    pub steps: usize,
    #[serde(default)]
    pub finetune_epochs_per_step: usize,
    #[serde(default)]
    pub granularity: Granularity,
}

fn one() -> usize {
    1
}

impl SparsitySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_keep_ratio > 0.0 && self.target_keep_ratio <= 1.0) {
            return Err(Error::config(format!(
                "target_keep_ratio must lie in (0, 1]; {} would remove every filter",
                self.target_keep_ratio
            )));
        }
        if self.steps == 0 {
            return Err(Error::config("schedule needs at least one step"));
        }
        Ok(())
    }

    /// Linear ramp from 1 to the target; the last entry is exactly the target.
    pub fn step_keep_ratios(&self) -> Vec<f64> {
        let drop = 1.0 - self.target_keep_ratio;
        (1..=self.steps)
            .map(|i| if i == self.steps { self.target_keep_ratio } else { 1.0 - drop * i as f64 / self.steps as f64 })
            .collect()
    }
}

pub fn kept_count(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64 - CEIL_SLACK).ceil() as usize).clamp(1, total)
}

/// Blocks whose first conv is prunable.
pub fn prunable_blocks(spec: &NetworkSpec) -> Vec<BlockInfo> {
    spec.blocks()
}

/// Weight tensors subject to unstructured pruning: every conv and the classifier.
pub fn prunable_weight_keys(spec: &NetworkSpec) -> Vec<String> {
    spec.layers().iter().map(|l| weight_key(&l.name)).collect()
}

/// Sum of absolute values of each output filter.
pub fn filter_l1_norms(weights: &Tensor) -> Vec<f64> {
    let per = weights.row_len();
    weights.data().chunks(per.max(1)).map(|f| f.iter().map(|v| v.abs()).sum()).collect()
}

/// Filter indices by descending L1 norm; ties keep the lower index first.
pub fn rank_filters_l1(weights: &Tensor) -> Vec<usize> {
    rank_desc(&filter_l1_norms(weights))
}

fn rank_desc(norms: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    order
}

impl PruneMask {
    /// Mask keeping everything prunable in `store`.
    pub fn keep_all(store: &ParameterStore, granularity: Granularity) -> Self {
        let layers = match granularity {
            Granularity::Filter => prunable_blocks(&store.spec)
                .into_iter()
                .map(|b| (b.conv1(), vec![true; b.inner]))
                .collect(),
            Granularity::Weight => prunable_weight_keys(&store.spec)
                .into_iter()
                .map(|k| {
                    let n = store.param(&k).len();
                    (k, vec![true; n])
                })
                .collect(),
        };
        Self { granularity, layers }
    }

    pub fn kept(&self, layer: &str) -> Option<usize> {
        self.layers.get(layer).map(|m| m.iter().filter(|&&k| k).count())
    }

    pub fn total_kept(&self) -> usize {
        self.layers.values().map(|m| m.iter().filter(|&&k| k).count()).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }

    /// Checks every entry against the model's layers and shapes.
    pub fn check(&self, store: &ParameterStore) -> Result<()> {
        match self.granularity {
            Granularity::Filter => {
                let blocks = prunable_blocks(&store.spec);
                for (layer, keep) in &self.layers {
                    let Some(block) = blocks.iter().find(|b| &b.conv1() == layer) else {
                        return Err(Error::input(residual_violation(&store.spec, layer)));
                    };
                    if keep.len() != block.inner {
                        return Err(Error::input(format!(
                            "mask for layer `{layer}` has {} entries, layer has {} filters",
                            keep.len(),
                            block.inner
                        )));
                    }
                    if !keep.iter().any(|&k| k) {
                        return Err(Error::input(format!("mask for layer `{layer}` keeps no filter")));
                    }
                }
            }
            Granularity::Weight => {
                for (key, keep) in &self.layers {
                    let t = store
                        .get(key)
                        .ok_or_else(|| Error::input(format!("mask names unknown tensor `{key}`")))?;
                    if t.len() != keep.len() {
                        return Err(Error::input(format!(
                            "mask for `{key}` has {} entries, tensor has {}",
                            keep.len(),
                            t.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Zeroes masked parameters of `store` in place.
    pub fn apply_in_place(&self, store: &mut ParameterStore) -> Result<()> {
        self.check(store)?;
        let blocks = prunable_blocks(&store.spec);
        zero_masked(self, &blocks, store.entries_mut(), true);
        Ok(())
    }

    /// Zeroes gradient entries of masked parameters.
    pub fn mask_gradients(&self, spec: &NetworkSpec, grads: &mut IndexMap<String, Tensor>) {
        zero_masked(self, &prunable_blocks(spec), grads, false);
    }
}

fn residual_violation(spec: &NetworkSpec, layer: &str) -> String {
    let layer_names: Vec<String> = spec.layers().into_iter().map(|l| l.name).collect();
    if !layer_names.iter().any(|n| n == layer) {
        return format!("mask names unknown layer `{layer}`");
    }
    if let Some(block) = spec.blocks().iter().find(|b| b.conv2() == layer) {
        format!(
            "pruning `{layer}` would change the {}-channel output of block `{}`, which must match its residual shortcut and the next block's input",
            block.out_channels, block.prefix
        )
    } else {
        format!("pruning `{layer}` would change the channel count entering the first block's residual shortcut or the classifier")
    }
}

fn zero_masked(mask: &PruneMask, blocks: &[BlockInfo], entries: &mut IndexMap<String, Tensor>, state: bool) {
    match mask.granularity {
        Granularity::Filter => {
            for block in blocks {
                let Some(keep) = mask.layers.get(&block.conv1()) else { continue };
                let bn = block.bn1();
                for (f, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
                    if let Some(w) = entries.get_mut(&weight_key(&block.conv1())) {
                        w.row_mut(f).fill(0.0);
                    }
                    for p in ["gamma", "beta", "running_mean"] {
                        if let Some(t) = entries.get_mut(&format!("{bn}.{p}")) {
                            t.data_mut()[f] = 0.0;
                        }
                    }
                    if state {
                        if let Some(t) = entries.get_mut(&format!("{bn}.running_var")) {
                            t.data_mut()[f] = 1.0;
                        }
                    }
                    if let Some(w2) = entries.get_mut(&weight_key(&block.conv2())) {
                        let (out, inner) = (w2.shape()[0], w2.shape()[1]);
                        let kk = w2.shape()[2] * w2.shape()[3];
                        let data = w2.data_mut();
                        for o in 0..out {
                            data[(o * inner + f) * kk..(o * inner + f + 1) * kk].fill(0.0);
                        }
                    }
                }
            }
        }
        Granularity::Weight => {
            for (key, keep) in &mask.layers {
                if let Some(t) = entries.get_mut(key) {
                    for (v, &k) in t.data_mut().iter_mut().zip(keep) {
                        if !k {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Copy of `store` with masked filters (and their downstream channels) zeroed.
pub fn apply_mask(store: &ParameterStore, mask: &PruneMask) -> Result<ParameterStore> {
    let mut out = store.clone();
    mask.apply_in_place(&mut out)?;
    Ok(out)
}

/// Physically removes masked filters; returns the smaller store and its spec.
pub fn compact(store: &ParameterStore, mask: &PruneMask) -> Result<(ParameterStore, NetworkSpec)> {
    if mask.granularity != Granularity::Filter {
        return Err(Error::input("only filter-granularity masks can be compacted"));
    }
    mask.check(store)?;
    let blocks = prunable_blocks(&store.spec);
    let mut inner_widths = Vec::with_capacity(blocks.len());
    let mut entries = store.entries().clone();
    for block in &blocks {
        let kept: Vec<usize> = match mask.layers.get(&block.conv1()) {
            Some(keep) => keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect(),
            None => (0..block.inner).collect(),
        };
        inner_widths.push(kept.len());
        let w1 = store.weight(&block.conv1());
        entries.insert(weight_key(&block.conv1()), w1.select_rows(&kept));
        for p in ["gamma", "beta", "running_mean", "running_var"] {
            let key = format!("{}.{p}", block.bn1());
            let t = store.param(&key);
            entries.insert(key, Tensor::new(vec![kept.len()], kept.iter().map(|&i| t.data()[i]).collect())?);
        }
        let w2 = store.weight(&block.conv2());
        let (out, inner) = (w2.shape()[0], w2.shape()[1]);
        let kk = w2.shape()[2] * w2.shape()[3];
        let mut data = Vec::with_capacity(out * kept.len() * kk);
        for o in 0..out {
            for &i in &kept {
                data.extend_from_slice(&w2.data()[(o * inner + i) * kk..(o * inner + i + 1) * kk]);
            }
        }
        let shape = vec![out, kept.len(), w2.shape()[2], w2.shape()[3]];
        entries.insert(weight_key(&block.conv2()), Tensor::new(shape, data)?);
    }
    let spec = NetworkSpec { inner_widths: Some(inner_widths), ..store.spec.clone() };
    let compacted = ParameterStore::from_entries(spec.clone(), store.seed, store.step, entries)?;
    Ok((compacted, spec))
}

/// What one pruning step decided, for audit and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStepLog {
    pub step: usize,
    pub keep_ratio: f64,
    /// Per layer (filter mode): L1 norm of every filter when the decision was made.
    pub norms: IndexMap<String, Vec<f64>>,
    /// Per layer (filter mode) or tensor (weight mode): number kept after the step.
    pub kept: IndexMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub store: ParameterStore,
    pub mask: PruneMask,
    pub log: Vec<PruneStepLog>,
}

/// Iterative rank → prune → fine-tune driver, resumable between steps.
#[derive(Debug, Clone)]
pub struct PruneRun {
    schedule: SparsitySchedule,
    ratios: Vec<f64>,
    store: ParameterStore,
    mask: PruneMask,
    completed: usize,
    log: Vec<PruneStepLog>,
}

impl PruneRun {
    /// Starts from a copy of the baseline weights.
    pub fn new(baseline: &ParameterStore, schedule: &SparsitySchedule) -> Result<Self> {
        Self::resume(baseline.clone(), PruneMask::keep_all(baseline, schedule.granularity), 0, schedule)
    }

    /// Continues after `completed` steps from a saved `(store, mask)`.
    pub fn resume(store: ParameterStore, mask: PruneMask, completed: usize, schedule: &SparsitySchedule) -> Result<Self> {
        schedule.validate()?;
        if store.spec.inner_widths.is_some() {
            return Err(Error::input("iterative pruning works on masked (uncompacted) models"));
        }
        if mask.granularity != schedule.granularity {
            return Err(Error::input("mask granularity does not match the schedule"));
        }
        mask.check(&store)?;
        if completed > schedule.steps {
            return Err(Error::input(format!("{completed} completed steps exceeds the schedule's {}", schedule.steps)));
        }
        Ok(Self { ratios: schedule.step_keep_ratios(), schedule: schedule.clone(), store, mask, completed, log: Vec::new() })
    }

    pub fn is_done(&self) -> bool {
        self.completed == self.schedule.steps
    }

    pub fn completed_steps(&self) -> usize {
        self.completed
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn mask(&self) -> &PruneMask {
        &self.mask
    }

    /// Re-ranks, tightens the mask to this step's ratio, then runs
    /// `finetune_epochs_per_step` invocations of `train_step` on the masked model.
    pub fn step(
        &mut self,
        mut train_step: impl FnMut(&mut ParameterStore, &PruneMask, usize, usize) -> Result<()>,
    ) -> Result<&PruneStepLog> {
        if self.is_done() {
            return Err(Error::input("pruning schedule already finished"));
        }
        let step = self.completed;
        let ratio = self.ratios[step];
        let mut entry = PruneStepLog { step, keep_ratio: ratio, norms: IndexMap::new(), kept: IndexMap::new() };
        match self.schedule.granularity {
            Granularity::Filter => {
                for block in prunable_blocks(&self.store.spec) {
                    let layer = block.conv1();
                    let norms = filter_l1_norms(self.store.weight(&layer));
                    let current = &self.mask.layers[&layer];
                    let target = kept_count(ratio, norms.len());
                    let keep_idx: Vec<usize> =
                        rank_desc(&norms).into_iter().filter(|&i| current[i]).take(target).collect();
                    let mut keep = vec![false; norms.len()];
                    for i in &keep_idx {
                        keep[*i] = true;
                    }
                    entry.kept.insert(layer.clone(), keep_idx.len());
                    entry.norms.insert(layer.clone(), norms);
                    self.mask.layers.insert(layer, keep);
                }
            }
            Granularity::Weight => {
                let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
                for (t, (key, keep)) in self.mask.layers.iter().enumerate() {
                    let w = self.store.param(key);
                    candidates.extend(
                        w.data().iter().zip(keep).enumerate().filter(|(_, (_, &k))| k).map(|(i, (v, _))| (v.abs(), t, i)),
                    );
                }
                let target = kept_count(ratio, self.mask.total());
                let drop = candidates.len().saturating_sub(target);
                // ascending magnitude; ties drop the earlier tensor/index first
                candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                for &(_, t, i) in &candidates[..drop] {
                    self.mask.layers[t][i] = false;
                }
                for (key, keep) in &self.mask.layers {
                    entry.kept.insert(key.clone(), keep.iter().filter(|&&k| k).count());
                }
            }
        }
        self.mask.apply_in_place(&mut self.store)?;
        for epoch in 0..self.schedule.finetune_epochs_per_step {
            train_step(&mut self.store, &self.mask, step, epoch)?;
            self.mask.apply_in_place(&mut self.store)?;
        }
        self.completed += 1;
        self.log.push(entry);
        Ok(self.log.last().expect("just pushed"))
    }

    pub fn finish(self) -> PruneOutcome {
        PruneOutcome { store: self.store, mask: self.mask, log: self.log }
    }
}

/// Runs the whole schedule starting from the baseline weights.
pub fn iterative_prune(
    baseline: &ParameterStore,
    schedule: &SparsitySchedule,
    mut train_step: impl FnMut(&mut ParameterStore, &PruneMask, usize, usize) -> Result<()>,
) -> Result<PruneOutcome> {
    let mut run = PruneRun::new(baseline, schedule)?;
    while !run.is_done() {
        run.step(&mut train_step)?;
    }
    Ok(run.finish())
}

/// Fraction of exactly-zero entries over the tensors named in a weight mask.
pub fn zero_fraction(store: &ParameterStore, keys: impl IntoIterator<Item = impl AsRef<str>>) -> f64 {
    let (mut zeros, mut total) = (0usize, 0usize);
    for k in keys {
        let t = store.param(k.as_ref());
        zeros += t.data().iter().filter(|&&v| v == 0.0).count();
        total += t.len();
    }
    zeros as f64 / total.max(1) as f64
}
