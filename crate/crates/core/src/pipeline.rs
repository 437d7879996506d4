//! The four-stage procedure: train O, quantize and freeze Q, iteratively prune S
//! under the HCE objective, then evaluate and cost the ensemble.
//!
//! Layout under the output directory:
//!
//! ```text
//! run_config.json     resolved configuration
//! stage.log           one line per stage: "trained" / "restored" / "written"
//! metrics.jsonl       one summary record per stage
//! 01_baseline/        o.ckpt, train_log.jsonl, manifest.json
//! 02_quantize/        q.ckpt, q.quant.json, manifest.json
//! 03_prune/step_<k>/  s.ckpt, mask.json, prune_log.json, train_log.jsonl, manifest.json
//! 04_report/          report.json, error_sets.json, cost.txt, diversity.txt, manifest.json
//! ```
//!
//! Every manifest records a hash of the configuration it was produced under and
//! the fingerprints of its inputs and outputs; with `resume` a stage is restored
//! only when all three still match.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_mask, load_quantized, load_store, save_mask, save_quantized, save_store, write_atomic};
use crate::cost::{hce_cost, CostReport, HceCost};
use crate::ensemble::{diversity_report, error_sets, DiversityReport, Ensemble, EnsembleMode, ErrorSets, MemberPredictions};
use crate::error::{Error, Result};
use crate::nn::data::{load_cifar10_bin, CifarSubset};
use crate::nn::store::short_hex;
use crate::nn::train::{train_epochs, BatchLoss, TrainingLog};
use crate::nn::{evaluate, train_baseline, Dataset, NetworkSpec, ParameterStore, SyntheticConfig, TrainConfig};
use crate::objective::{hce_loss_with_grad, make_targets, HceLossConfig};
use crate::prune::{compact, Granularity, PruneMask, PruneRun, PruneStepLog, SparsitySchedule};
use crate::quant::{quantize_model, QuantConfig, QuantizedModel};

pub const BASELINE_DIR: &str = "01_baseline";
pub const QUANTIZE_DIR: &str = "02_quantize";
pub const PRUNE_DIR: &str = "03_prune";
pub const REPORT_DIR: &str = "04_report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticConfig),
    /// Directory with the CIFAR-10 binary batches (`data_batch_{1..5}.bin`, `test_batch.bin`).
    Cifar10 {
        path: Option<PathBuf>,
        #[serde(default)]
        subset: CifarSubset,
        #[serde(default)]
        test_max_samples: Option<usize>,
    },
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if let DatasetConfig::Cifar10 { path: None, .. } = self {
            return Err(Error::config("dataset.path is required when dataset.kind = \"cifar10\""));
        }
        Ok(())
    }

    /// `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        match self {
            DatasetConfig::Synthetic(cfg) => cfg.generate(),
            DatasetConfig::Cifar10 { path, subset, test_max_samples } => {
                let dir = path.as_ref().expect("validated");
                let train_files: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
                for f in train_files.iter().chain([&dir.join("test_batch.bin")]) {
                    if !f.exists() {
                        return Err(Error::input(format!("dataset file {} is missing", f.display())));
                    }
                }
                let train = load_cifar10_bin(&train_files, subset)?;
                let test_subset = CifarSubset { max_samples: *test_max_samples, ..subset.clone() };
                let test = load_cifar10_bin(&[dir.join("test_batch.bin")], &test_subset)?;
                Ok((train, test))
            }
        }
    }

    pub fn id(&self) -> String {
        short_hex(Sha256::new_with_prefix(serde_json::to_vec(self).expect("serializable")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HceRunConfig {
    pub network: NetworkSpec,
    pub dataset: DatasetConfig,
    pub quant: QuantConfig,
    pub prune: SparsitySchedule,
    pub loss: HceLossConfig,
    /// Baseline training; its `seed` is replaced by one derived from `seed`.
    pub baseline: TrainConfig,
    /// Fine-tuning of S. `epochs` is the number of epochs after each prune step.
    pub finetune: TrainConfig,
    #[serde(default)]
    pub ensemble_mode: EnsembleMode,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl HceRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate().map_err(|e| Error::config(e.to_string()))?;
        self.dataset.validate()?;
        self.quant.validate()?;
        self.prune.validate()?;
        self.loss.validate()?;
        self.baseline.validate()?;
        self.finetune.validate()?;
        if self.prune.finetune_epochs_per_step != 0 && self.prune.finetune_epochs_per_step != self.finetune.epochs {
            return Err(Error::config(format!(
                "prune.finetune_epochs_per_step ({}) disagrees with finetune.epochs ({})",
                self.prune.finetune_epochs_per_step, self.finetune.epochs
            )));
        }
        Ok(())
    }

    /// Schedule with the per-step epoch count taken from `finetune`.
    pub fn schedule(&self) -> SparsitySchedule {
        SparsitySchedule { finetune_epochs_per_step: self.finetune.epochs, ..self.prune.clone() }
    }
}

/// Independent seed for one (stage, step, epoch) slot.
pub fn derive_seed(seed: u64, stage: &str, step: usize, epoch: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update((step as u64).to_le_bytes());
    h.update((epoch as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn config_hash<T: Serialize>(parts: &T) -> String {
    short_hex(Sha256::new_with_prefix(serde_json::to_vec(parts).expect("serializable")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: IndexMap<String, String>,
    pub outputs: IndexMap<String, String>,
}

impl StageManifest {
    fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&Self::path(dir), &serde_json::to_vec_pretty(self)?)
    }

    pub fn read(dir: &Path) -> Option<Self> {
        serde_json::from_slice(&fs::read(Self::path(dir)).ok()?).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopAfter {
    Baseline,
    Quantize,
    /// After this many prune steps have completed.
    PruneSteps(usize),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    pub stop_after: Option<StopAfter>,
}

/// Human-readable stage log, mirrored to `stage.log`.
#[derive(Debug, Default)]
pub struct StageLog {
    pub lines: Vec<String>,
    metrics: Vec<serde_json::Value>,
    root: PathBuf,
}

impl StageLog {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), ..Default::default() }
    }

    fn record(&mut self, stage: &str, restored: bool, extra: serde_json::Value) -> Result<()> {
        self.record_status(stage, if restored { "restored" } else { "trained" }, extra)
    }

    fn record_status(&mut self, stage: &str, status: &str, extra: serde_json::Value) -> Result<()> {
        info!("{stage}: {status}");
        self.lines.push(format!("{stage}: {status}"));
        let mut record = serde_json::json!({ "stage": stage, "status": status });
        if let (Some(r), serde_json::Value::Object(extra)) = (record.as_object_mut(), extra) {
            r.extend(extra);
        }
        self.metrics.push(record);
        self.flush()
    }

    fn flush(&self) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        write_atomic(&self.root.join("stage.log"), self.lines.iter().map(|l| format!("{l}\n")).collect::<String>().as_bytes())?;
        let jsonl: String = self.metrics.iter().map(|m| format!("{m}\n")).collect();
        write_atomic(&self.root.join("metrics.jsonl"), jsonl.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberAccuracies {
    pub baseline: f64,
    pub quantized: f64,
    pub pruned: f64,
    pub ensemble: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberFingerprints {
    pub baseline: String,
    pub quantized: String,
    pub pruned: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSection {
    pub baseline: CostReport,
    pub quantized: CostReport,
    pub pruned: CostReport,
    pub hce: HceCost,
}

/// Raw record behind every rendered table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HceReport {
    pub seed: u64,
    pub dataset_id: String,
    pub alpha: f64,
    pub temperature: f64,
    pub keep_ratio: f64,
    pub granularity: Granularity,
    pub weight_bits: u32,
    pub activation_bits: u32,
    pub ensemble_mode: EnsembleMode,
    pub test_samples: usize,
    pub accuracy: MemberAccuracies,
    pub fingerprints: MemberFingerprints,
    /// Q reloaded after stage 3 has the fingerprint recorded before it.
    pub quantized_frozen: bool,
    pub diversity: DiversityReport,
    pub cost: CostSection,
    pub prune_log: Vec<PruneStepLog>,
    pub warnings: Vec<String>,
}

pub struct HceOutcome {
    pub baseline: ParameterStore,
    pub quantized: QuantizedModel,
    /// Masked, uncompacted weights.
    pub pruned: ParameterStore,
    pub mask: PruneMask,
    pub error_sets: ErrorSets,
    pub report: HceReport,
    pub stage_log: Vec<String>,
}

pub enum RunStatus {
    Complete(Box<HceOutcome>),
    Stopped { after: StopAfter, stage_log: Vec<String> },
}

impl RunStatus {
    pub fn complete(self) -> Result<HceOutcome> {
        match self {
            RunStatus::Complete(o) => Ok(*o),
            RunStatus::Stopped { after, .. } => Err(Error::input(format!("run stopped after {after:?}"))),
        }
    }
}

/// Runs (or resumes) all four stages.
pub fn run_hce(cfg: &HceRunConfig, opts: &RunOptions) -> Result<RunStatus> {
    cfg.validate()?;
    let (train, test) = cfg.dataset.load()?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_atomic(&cfg.out_dir.join("run_config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    let mut log = StageLog::new(&cfg.out_dir);
    let o = stage_baseline(cfg, &train, &test, &cfg.out_dir, opts, &mut log)?;
    if opts.stop_after == Some(StopAfter::Baseline) {
        return Ok(RunStatus::Stopped { after: StopAfter::Baseline, stage_log: log.lines });
    }
    let q = stage_quantize(cfg, &o, &train, &test, &cfg.out_dir, opts, &mut log)?;
    if opts.stop_after == Some(StopAfter::Quantize) {
        return Ok(RunStatus::Stopped { after: StopAfter::Quantize, stage_log: log.lines });
    }
    prune_and_report(cfg, &train, &test, o, q, &cfg.out_dir, opts, &mut log)
}

fn check_data(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::input("dataset is empty"));
    }
    if data.num_classes != spec.num_classes || data.sample_shape() != spec.input_shape {
        return Err(Error::config(format!(
            "dataset ({} classes, {:?}) does not match network ({} classes, {:?})",
            data.num_classes,
            data.sample_shape(),
            spec.num_classes,
            spec.input_shape
        )));
    }
    Ok(())
}

/// Stage 1: trains O, or restores it.
pub fn stage_baseline(
    cfg: &HceRunConfig,
    train: &Dataset,
    test: &Dataset,
    root: &Path,
    opts: &RunOptions,
    log: &mut StageLog,
) -> Result<ParameterStore> {
    check_data(&cfg.network, train)?;
    let dir = root.join(BASELINE_DIR);
    let hash = config_hash(&(&cfg.network, &cfg.baseline, cfg.dataset.id(), cfg.seed));
    let ckpt = dir.join("o.ckpt");
    if opts.resume {
        if let Some(m) = StageManifest::read(&dir).filter(|m| m.config_hash == hash) {
            if let Ok(o) = load_store(&ckpt) {
                if m.outputs.get("baseline") == Some(&o.content_fingerprint()) {
                    log.record("baseline", true, serde_json::json!({ "fingerprint": o.content_fingerprint() }))?;
                    return Ok(o);
                }
            }
        }
    }
    let train_cfg = TrainConfig { seed: derive_seed(cfg.seed, "baseline", 0, 0), ..cfg.baseline.clone() };
    let (o, train_log) = train_baseline(&cfg.network, train, &train_cfg).map_err(|e| e.in_stage("baseline"))?;
    let acc = evaluate(&o, test)?.accuracy;
    fs::create_dir_all(&dir)?;
    save_store(&o, &ckpt)?;
    train_log.write_jsonl(&dir.join("train_log.jsonl"))?;
    StageManifest {
        stage: "baseline".into(),
        config_hash: hash,
        inputs: IndexMap::from([("dataset".to_string(), cfg.dataset.id())]),
        outputs: IndexMap::from([("baseline".to_string(), o.content_fingerprint())]),
    }
    .write(&dir)?;
    log.record("baseline", false, serde_json::json!({ "fingerprint": o.content_fingerprint(), "test_accuracy": acc }))?;
    Ok(o)
}

/// Stage 2: quantizes O into Q, or restores it.
pub fn stage_quantize(
    cfg: &HceRunConfig,
    o: &ParameterStore,
    train: &Dataset,
    test: &Dataset,
    root: &Path,
    opts: &RunOptions,
    log: &mut StageLog,
) -> Result<QuantizedModel> {
    let dir = root.join(QUANTIZE_DIR);
    let hash = config_hash(&(&cfg.quant, cfg.dataset.id()));
    let inputs = IndexMap::from([("baseline".to_string(), o.content_fingerprint())]);
    if opts.resume {
        if let Some(m) = StageManifest::read(&dir).filter(|m| m.config_hash == hash && m.inputs == inputs) {
            if let Ok(q) = load_quantized(&dir) {
                if m.outputs.get("quantized") == Some(&q.fingerprint()) {
                    log.record("quantize", true, serde_json::json!({ "fingerprint": q.fingerprint() }))?;
                    return Ok(q);
                }
            }
        }
    }
    let q = quantize_model(o, train, &cfg.quant).map_err(|e| e.in_stage("quantize"))?;
    for w in &q.warnings {
        warn!("quantize: {w}");
    }
    let acc = evaluate(&q, test)?.accuracy;
    fs::create_dir_all(&dir)?;
    save_quantized(&q, &dir)?;
    StageManifest {
        stage: "quantize".into(),
        config_hash: hash,
        inputs,
        outputs: IndexMap::from([("quantized".to_string(), q.fingerprint())]),
    }
    .write(&dir)?;
    log.record("quantize", false, serde_json::json!({ "fingerprint": q.fingerprint(), "test_accuracy": acc }))?;
    Ok(q)
}

fn step_dir(root: &Path, step: usize) -> PathBuf {
    root.join(PRUNE_DIR).join(format!("step_{}", step + 1))
}

/// Stages 3 and 4 given trained O and frozen Q. `root` receives `03_prune` and `04_report`.
#[allow(clippy::too_many_arguments)]
pub fn prune_and_report(
    cfg: &HceRunConfig,
    train: &Dataset,
    test: &Dataset,
    o: ParameterStore,
    q: QuantizedModel,
    root: &Path,
    opts: &RunOptions,
    log: &mut StageLog,
) -> Result<RunStatus> {
    cfg.validate()?;
    check_data(&cfg.network, train)?;
    let q_before = q.fingerprint();
    let schedule = cfg.schedule();
    let hash = config_hash(&(&schedule, &cfg.finetune, &cfg.loss, cfg.seed, cfg.dataset.id()));
    let base_inputs =
        IndexMap::from([("baseline".to_string(), o.content_fingerprint()), ("quantized".to_string(), q_before.clone())]);

    // Longest prefix of steps whose manifests still chain correctly.
    let mut run = PruneRun::new(&o, &schedule)?;
    let mut prune_log = Vec::new();
    if opts.resume {
        let mut prev = o.content_fingerprint();
        for step in 0..schedule.steps {
            let dir = step_dir(root, step);
            let mut inputs = base_inputs.clone();
            inputs.insert("previous".into(), prev.clone());
            let Some(m) = StageManifest::read(&dir).filter(|m| m.config_hash == hash && m.inputs == inputs) else { break };
            let (Ok(s), Ok(mask)) = (load_store(&dir.join("s.ckpt")), load_mask(&dir.join("mask.json"))) else { break };
            let Ok(entry) = fs::read(dir.join("prune_log.json"))
                .map_err(Error::from)
                .and_then(|b| serde_json::from_slice::<PruneStepLog>(&b).map_err(Error::from))
            else {
                break;
            };
            if m.outputs.get("pruned") != Some(&s.content_fingerprint()) {
                break;
            }
            prev = s.content_fingerprint();
            run = PruneRun::resume(s, mask, step + 1, &schedule)?;
            prune_log.push(entry);
            log.record(&format!("prune step {}/{}", step + 1, schedule.steps), true, serde_json::json!({ "fingerprint": prev }))?;
        }
    }

    if !run.is_done() {
        let targets = make_targets(&o, &q, &train.inputs, cfg.loss.temperature).map_err(|e| e.in_stage("prune"))?;
        let loss_cfg = cfg.loss;
        while !run.is_done() {
            let step = run.completed_steps();
            let prev = run.store().content_fingerprint();
            let mut step_train_log = TrainingLog::default();
            let entry = run
                .step(|store, mask, step, epoch| {
                    let epoch_cfg = TrainConfig {
                        epochs: 1,
                        learning_rate: cfg.finetune.lr_at(epoch),
                        lr_milestones: Vec::new(),
                        seed: derive_seed(cfg.seed, "prune", step, epoch),
                        ..cfg.finetune.clone()
                    };
                    let spec = store.spec.clone();
                    let constrain = |s: &mut ParameterStore, g: &mut crate::nn::Gradients| {
                        mask.mask_gradients(&spec, g);
                        mask.apply_in_place(s).expect("mask checked against this model");
                    };
                    let loss = |scores: &crate::tensor::Tensor, batch: &crate::nn::Batch, idx: &[usize]| {
                        let b = hce_loss_with_grad(scores, &batch.labels, &targets.select(idx), &loss_cfg)?;
                        Ok(BatchLoss { ce: b.ce, kl: b.kl, kl_weight: 1.0 - loss_cfg.alpha, total: b.total, grad: b.grad })
                    };
                    let mut l = train_epochs(store, train, &epoch_cfg, loss, Some(&constrain))?;
                    for r in &mut l.steps {
                        r.epoch = epoch;
                    }
                    for r in &mut l.epochs {
                        r.epoch = epoch;
                    }
                    step_train_log.steps.extend(l.steps);
                    step_train_log.epochs.extend(l.epochs);
                    Ok(())
                })
                .map_err(|e| e.in_stage(format!("prune step {}", step + 1)))?
                .clone();
            let dir = step_dir(root, step);
            fs::create_dir_all(&dir)?;
            save_store(run.store(), &dir.join("s.ckpt"))?;
            save_mask(run.mask(), &dir.join("mask.json"))?;
            write_atomic(&dir.join("prune_log.json"), &serde_json::to_vec_pretty(&entry)?)?;
            step_train_log.write_jsonl(&dir.join("train_log.jsonl"))?;
            let mut inputs = base_inputs.clone();
            inputs.insert("previous".into(), prev);
            let fp = run.store().content_fingerprint();
            StageManifest {
                stage: format!("prune step {}", step + 1),
                config_hash: hash.clone(),
                inputs,
                outputs: IndexMap::from([("pruned".to_string(), fp.clone())]),
            }
            .write(&dir)?;
            prune_log.push(entry);
            let last = step_train_log.epochs.last();
            log.record(
                &format!("prune step {}/{}", step + 1, schedule.steps),
                false,
                serde_json::json!({
                    "fingerprint": fp,
                    "keep_ratio": prune_log.last().map(|e| e.keep_ratio),
                    "train_accuracy": last.map(|e| e.train_accuracy),
                    "mean_loss": last.map(|e| e.mean_loss),
                }),
            )?;
            if opts.stop_after == Some(StopAfter::PruneSteps(run.completed_steps())) && !run.is_done() {
                return Ok(RunStatus::Stopped { after: StopAfter::PruneSteps(run.completed_steps()), stage_log: log.lines.clone() });
            }
        }
    }

    let outcome = run.finish();
    let q_after = load_quantized(&root.join(QUANTIZE_DIR)).map(|q| q.fingerprint()).unwrap_or_else(|_| q.fingerprint());
    let quantized_frozen = q_after == q_before && q.fingerprint() == q_before;
    if !quantized_frozen {
        return Err(Error::input("quantized model changed during pruning").in_stage("report"));
    }
    let (report, sets) = evaluate_members(cfg, test, &o, &q, &outcome.store, &outcome.mask, prune_log)?;
    write_report(&root.join(REPORT_DIR), &report, &sets)?;
    log.record_status(
        "report",
        "written",
        serde_json::json!({ "accuracy": report.accuracy, "overlap_ratio": report.diversity.overlap_ratio }),
    )?;
    Ok(RunStatus::Complete(Box::new(HceOutcome {
        baseline: o,
        quantized: q,
        pruned: outcome.store,
        mask: outcome.mask,
        error_sets: sets,
        report,
        stage_log: log.lines.clone(),
    })))
}

/// Stage 4 evaluation: accuracies, error sets, diversity and cost.
pub fn evaluate_members(
    cfg: &HceRunConfig,
    test: &Dataset,
    o: &ParameterStore,
    q: &QuantizedModel,
    s: &ParameterStore,
    mask: &PruneMask,
    prune_log: Vec<PruneStepLog>,
) -> Result<(HceReport, ErrorSets)> {
    let (s_eval, s_cost_spec) = match mask.granularity {
        Granularity::Filter => {
            let (compacted, spec) = compact(s, mask)?;
            (compacted, spec)
        }
        Granularity::Weight => (s.clone(), s.spec.clone()),
    };
    let eo = evaluate(o, test)?;
    let eq = evaluate(q, test)?;
    let es = evaluate(&s_eval, test)?;
    let ens = Ensemble { pruned: &s_eval, quantized: q, mode: cfg.ensemble_mode };
    let ee = evaluate(&ens, test)?;
    let sets = error_sets(
        MemberPredictions {
            quantized: &eq.predictions,
            pruned: &es.predictions,
            baseline: &eo.predictions,
            ensemble: &ee.predictions,
        },
        &test.labels,
    )?;
    let diversity = diversity_report(&sets)?;

    let base_cost = CostReport::float("baseline", &o.spec)?;
    let q_cost = CostReport::quantized("quantized", &o.spec, &q.config)?.with_baseline(&base_cost);
    let s_cost = match mask.granularity {
        Granularity::Filter => CostReport::float("pruned", &s_cost_spec)?,
        Granularity::Weight => CostReport::masked("pruned", &s.spec, mask)?,
    }
    .with_baseline(&base_cost);
    let hce = hce_cost(&s_cost, Some(&q_cost), &base_cost)?;

    let report = HceReport {
        seed: cfg.seed,
        dataset_id: cfg.dataset.id(),
        alpha: cfg.loss.alpha,
        temperature: cfg.loss.temperature,
        keep_ratio: cfg.prune.target_keep_ratio,
        granularity: cfg.prune.granularity,
        weight_bits: q.config.weight_bits,
        activation_bits: q.config.activation_bits,
        ensemble_mode: cfg.ensemble_mode,
        test_samples: test.len(),
        accuracy: MemberAccuracies {
            baseline: eo.accuracy,
            quantized: eq.accuracy,
            pruned: es.accuracy,
            ensemble: ee.accuracy,
        },
        fingerprints: MemberFingerprints {
            baseline: o.content_fingerprint(),
            quantized: q.fingerprint(),
            pruned: s.content_fingerprint(),
        },
        quantized_frozen: true,
        diversity,
        cost: CostSection { baseline: base_cost, quantized: q_cost, pruned: s_cost, hce },
        prune_log,
        warnings: q.warnings.clone(),
    };
    Ok((report, sets))
}

pub const REPORT_FILE: &str = "report.json";
pub const ERROR_SETS_FILE: &str = "error_sets.json";

fn write_report(dir: &Path, report: &HceReport, sets: &ErrorSets) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(REPORT_FILE), &serde_json::to_vec_pretty(report)?)?;
    write_atomic(&dir.join(ERROR_SETS_FILE), &serde_json::to_vec(sets)?)?;
    write_atomic(&dir.join("cost.txt"), report.cost.hce.combined.to_table().as_bytes())?;
    write_atomic(&dir.join("diversity.txt"), report.diversity.venn_table().as_bytes())?;
    StageManifest {
        stage: "report".into(),
        config_hash: config_hash(&report.ensemble_mode),
        inputs: IndexMap::from([
            ("baseline".to_string(), report.fingerprints.baseline.clone()),
            ("quantized".to_string(), report.fingerprints.quantized.clone()),
            ("pruned".to_string(), report.fingerprints.pruned.clone()),
        ]),
        outputs: IndexMap::new(),
    }
    .write(dir)
}

/// Reads `04_report/report.json` from a run directory.
pub fn read_report(run_dir: &Path) -> Result<HceReport> {
    let path = run_dir.join(REPORT_DIR).join(REPORT_FILE);
    let bytes = fs::read(&path).map_err(|_| Error::MissingRecords {
        missing: vec![path.display().to_string()],
        rerun: "run-hce".into(),
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}
