//! One function per CLI subcommand. Each takes a loaded config plus the common
//! flags and returns the records it produced; the binary only prints them.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::checkpoint::{load_mask, load_quantized, load_store, write_atomic};
use crate::cost::{hce_cost, CostReport, HceCost};
use crate::ensemble::{diversity_report, DiversityReport, ErrorSets};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::registry::{Registry, RunRecord};
use crate::experiment::report::{render_run_report, render_seed_summary, render_sweep, SweepRow};
use crate::nn::{build_model, NetworkSpec, ParameterStore};
use crate::objective::HceLossConfig;
use crate::pipeline::{
    evaluate_members, prune_and_report, read_report, run_hce, stage_baseline, stage_quantize, HceReport, RunOptions,
    StageLog, StopAfter, BASELINE_DIR, ERROR_SETS_FILE, PRUNE_DIR, QUANTIZE_DIR, REPORT_DIR, REPORT_FILE,
};
use crate::prune::{compact, kept_count, Granularity, PruneMask, SparsitySchedule};
use crate::quant::QuantizedModel;
use crate::region::{check_shared_plane, compute_grid, export_grid, labels_image, read_grid_text, Plane};
use crate::tensor::Tensor;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct CliOptions {
    /// Run only this seed instead of the config's list.
    pub seed: Option<u64>,
    pub resume: bool,
    /// Replaces the config's `out_dir`.
    pub out: Option<PathBuf>,
}

impl CliOptions {
    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = cfg.clone();
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg
    }
}

fn record(cfg: &ExperimentConfig, command: &str, seed: u64, dir: &Path, fingerprints: IndexMap<String, String>) -> Result<RunRecord> {
    let rec = RunRecord {
        run_id: format!("{}-{command}-seed{seed}", cfg.name),
        command: command.into(),
        name: cfg.name.clone(),
        seed,
        dir: dir.to_path_buf(),
        config: serde_json::to_value(cfg.run_config(seed))?,
        fingerprints,
    };
    Registry::open(&cfg.out_dir).record(&rec)?;
    Ok(rec)
}

pub fn cli_train_baseline(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<Vec<RunRecord>> {
    let cfg = opts.apply(cfg);
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let run = cfg.run_config(seed);
        run_hce(&run, &RunOptions { resume: opts.resume, stop_after: Some(StopAfter::Baseline) })?;
        let o = load_store(&run.out_dir.join(BASELINE_DIR).join("o.ckpt"))?;
        out.push(record(&cfg, "train-baseline", seed, &run.out_dir, IndexMap::from([("baseline".into(), o.content_fingerprint())]))?);
    }
    Ok(out)
}

/// Trains (or restores, with `--resume`) O, then quantizes it.
pub fn cli_quantize(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<Vec<RunRecord>> {
    let cfg = opts.apply(cfg);
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let run = cfg.run_config(seed);
        run_hce(&run, &RunOptions { resume: opts.resume, stop_after: Some(StopAfter::Quantize) })?;
        let q = load_quantized(&run.out_dir.join(QUANTIZE_DIR))?;
        let o = load_store(&run.out_dir.join(BASELINE_DIR).join("o.ckpt"))?;
        out.push(record(
            &cfg,
            "quantize",
            seed,
            &run.out_dir,
            IndexMap::from([("baseline".into(), o.content_fingerprint()), ("quantized".into(), q.fingerprint())]),
        )?);
    }
    Ok(out)
}

/// Full pipeline for every seed; writes per-run `report.md` and a cross-seed `summary.md`.
pub fn cli_run_hce(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<Vec<HceReport>> {
    let cfg = opts.apply(cfg);
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let run = cfg.run_config(seed);
        let outcome = run_hce(&run, &RunOptions { resume: opts.resume, stop_after: None })?.complete()?;
        let r = outcome.report;
        write_atomic(&run.out_dir.join(REPORT_DIR).join("report.md"), render_run_report(&r).as_bytes())?;
        record(
            &cfg,
            "run-hce",
            seed,
            &run.out_dir,
            IndexMap::from([
                ("baseline".into(), r.fingerprints.baseline.clone()),
                ("quantized".into(), r.fingerprints.quantized.clone()),
                ("pruned".into(), r.fingerprints.pruned.clone()),
            ]),
        )?;
        reports.push(r);
    }
    write_atomic(&cfg.out_dir.join(&cfg.name).join("summary.md"), render_seed_summary(&reports).as_bytes())?;
    Ok(reports)
}

pub fn sweep_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(&cfg.name).join(format!("sweep_seed_{seed}"))
}

/// α × keep-ratio grid on the first seed. O and Q are trained once and shared
/// by every point, since neither depends on α or the keep ratio.
pub fn cli_sweep_alpha(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<Vec<SweepRow>> {
    let cfg = opts.apply(cfg);
    let seed = cfg.seeds[0];
    let base_run = cfg.run_config(seed);
    base_run.validate()?;
    let root = sweep_dir(&cfg, seed);
    let shared = root.join("shared");
    let (train, test) = base_run.dataset.load()?;
    let run_opts = RunOptions { resume: opts.resume, stop_after: None };
    let mut log = StageLog::new(&shared);
    let o = stage_baseline(&base_run, &train, &test, &shared, &run_opts, &mut log)?;
    let q = stage_quantize(&base_run, &o, &train, &test, &shared, &run_opts, &mut log)?;
    let mut rows = Vec::new();
    for &keep in &cfg.sweep.keep_ratios {
        for &alpha in &cfg.sweep.alphas {
            let point = root.join(format!("keep_{keep}_alpha_{alpha}"));
            let mut run = base_run.clone();
            run.loss = HceLossConfig { alpha, ..run.loss };
            run.prune = SparsitySchedule { target_keep_ratio: keep, ..run.prune };
            run.out_dir = point.clone();
            let mut point_log = StageLog::new(&point);
            // Q is frozen: the pipeline re-reads it from the quantize stage of `point`.
            copy_quantize_stage(&shared, &point)?;
            let r = prune_and_report(&run, &train, &test, o.clone(), q.clone(), &point, &run_opts, &mut point_log)?
                .complete()?
                .report;
            rows.push(SweepRow {
                keep_ratio: keep,
                alpha,
                accuracy: r.accuracy.clone(),
                overlap_ratio: r.diversity.overlap_ratio,
                baseline_fingerprint: r.fingerprints.baseline.clone(),
                quantized_fingerprint: r.fingerprints.quantized.clone(),
                pruned_fingerprint: r.fingerprints.pruned.clone(),
            });
        }
    }
    write_atomic(&root.join("sweep.json"), &serde_json::to_vec_pretty(&rows)?)?;
    write_atomic(&root.join("sweep.md"), render_sweep(&rows).as_bytes())?;
    record(
        &cfg,
        "sweep-alpha",
        seed,
        &root,
        IndexMap::from([("baseline".into(), o.content_fingerprint()), ("quantized".into(), q.fingerprint())]),
    )?;
    Ok(rows)
}

fn copy_quantize_stage(from_root: &Path, to_root: &Path) -> Result<()> {
    let (src, dst) = (from_root.join(QUANTIZE_DIR), to_root.join(QUANTIZE_DIR));
    fs::create_dir_all(&dst)?;
    for f in ["q.ckpt", "q.quant.json", "manifest.json"] {
        fs::copy(src.join(f), dst.join(f))?;
    }
    Ok(())
}

/// Members of a finished run, as stored on disk.
pub struct StoredRun {
    pub baseline: ParameterStore,
    pub quantized: QuantizedModel,
    pub pruned: ParameterStore,
    pub mask: PruneMask,
}

fn missing(paths: Vec<PathBuf>, cfg_hint: &str) -> Error {
    Error::MissingRecords {
        missing: paths.iter().map(|p| p.display().to_string()).collect(),
        rerun: format!("hce run-hce {cfg_hint} --resume"),
    }
}

pub fn load_run(run_dir: &Path, prune_steps: usize) -> Result<StoredRun> {
    let step = run_dir.join(PRUNE_DIR).join(format!("step_{prune_steps}"));
    let needed = [
        run_dir.join(BASELINE_DIR).join("o.ckpt"),
        run_dir.join(QUANTIZE_DIR).join("q.ckpt"),
        run_dir.join(QUANTIZE_DIR).join("q.quant.json"),
        step.join("s.ckpt"),
        step.join("mask.json"),
    ];
    let absent: Vec<PathBuf> = needed.iter().filter(|p| !p.exists()).cloned().collect();
    if !absent.is_empty() {
        return Err(missing(absent, "--config <config>"));
    }
    Ok(StoredRun {
        baseline: load_store(&needed[0])?,
        quantized: load_quantized(&run_dir.join(QUANTIZE_DIR))?,
        pruned: load_store(&needed[3])?,
        mask: load_mask(&needed[4])?,
    })
}

/// Re-evaluates stored members on the test split.
pub fn cli_evaluate(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<Vec<HceReport>> {
    let cfg = opts.apply(cfg);
    let (_, test) = cfg.dataset.load()?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let run = cfg.run_config(seed);
        let m = load_run(&run.out_dir, run.prune.steps)?;
        let prune_log = read_report(&run.out_dir).map(|r| r.prune_log).unwrap_or_default();
        let (report, _) = evaluate_members(&run, &test, &m.baseline, &m.quantized, &m.pruned, &m.mask, prune_log)?;
        out.push(report);
    }
    Ok(out)
}

fn read_error_sets(run_dir: &Path) -> Result<ErrorSets> {
    let path = run_dir.join(REPORT_DIR).join(ERROR_SETS_FILE);
    let bytes = fs::read(&path).map_err(|_| missing(vec![path.clone()], "--config <config>"))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Diversity statistics from each run's stored error sets.
pub fn cli_diversity_report(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<Vec<DiversityReport>> {
    let cfg = opts.apply(cfg);
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let dir = cfg.run_dir(seed);
        let d = diversity_report(&read_error_sets(&dir)?)?;
        write_atomic(&dir.join(REPORT_DIR).join("diversity.txt"), d.venn_table().as_bytes())?;
        out.push(d);
    }
    Ok(out)
}

pub const REGION_DIR: &str = "regions";
pub const REGION_MEMBERS: [&str; 3] = ["baseline", "quantized", "pruned"];

/// Decision-region grids of O, Q and S on one shared plane per seed.
/// Returns the comparison image path per seed.
pub fn cli_visualize_region(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<Vec<PathBuf>> {
    let cfg = opts.apply(cfg);
    let (_, test) = cfg.dataset.load()?;
    let rc = &cfg.region;
    if rc.sample_index >= test.len() {
        return Err(Error::config(format!("region.sample_index {} outside {} test samples", rc.sample_index, test.len())));
    }
    let [c, h, w] = test.sample_shape();
    let center = Tensor::new(vec![c, h, w], test.inputs.row(rc.sample_index).to_vec())?;
    let plane = Plane::random(&center, rc.seed, rc.extent, rc.resolution)?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let run = cfg.run_config(seed);
        let m = load_run(&run.out_dir, run.prune.steps)?;
        let pruned = match m.mask.granularity {
            Granularity::Filter => compact(&m.pruned, &m.mask)?.0,
            Granularity::Weight => m.pruned.clone(),
        };
        let grids =
            [compute_grid(&m.baseline, &plane)?, compute_grid(&m.quantized, &plane)?, compute_grid(&pruned, &plane)?];
        let dir = run.out_dir.join(REGION_DIR);
        let mut roughness = IndexMap::new();
        for (name, g) in REGION_MEMBERS.iter().zip(&grids) {
            export_grid(g, &dir, name, rc.cell_size)?;
            roughness.insert(name.to_string(), g.roughness());
        }
        let refs: Vec<_> = grids.iter().collect();
        let path = dir.join("comparison.png");
        crate::region::comparison_image(&refs, rc.cell_size)?.save(&path)?;
        write_atomic(
            &dir.join("summary.json"),
            &serde_json::to_vec_pretty(&serde_json::json!({
                "members": REGION_MEMBERS,
                "boundary_roughness": roughness,
                "note": "roughness = label changes between 4-adjacent cells; an added diagnostic",
            }))?,
        )?;
        out.push(path);
    }
    Ok(out)
}

/// Analytic cost of the configured baseline, Q, and S (uniform keep ratio), from shapes alone.
pub fn config_cost(cfg: &ExperimentConfig) -> Result<(CostReport, CostReport, CostReport, HceCost)> {
    let spec = &cfg.network;
    let base = CostReport::float("baseline", spec)?;
    let q = CostReport::quantized("quantized", spec, &cfg.quant)?.with_baseline(&base);
    let keep = cfg.prune.target_keep_ratio;
    let s = match cfg.prune.granularity {
        Granularity::Filter => {
            let inner = spec.blocks().iter().map(|b| kept_count(keep, b.inner)).collect();
            CostReport::float("pruned", &NetworkSpec { inner_widths: Some(inner), ..spec.clone() })?
        }
        Granularity::Weight => {
            let mut mask = PruneMask::keep_all(&build_model(spec, 0)?, Granularity::Weight);
            for keep_flags in mask.layers.values_mut() {
                let n = kept_count(keep, keep_flags.len());
                keep_flags.iter_mut().skip(n).for_each(|k| *k = false);
            }
            CostReport::masked("pruned", spec, &mask)?
        }
    }
    .with_baseline(&base);
    let hce = hce_cost(&s, Some(&q), &base)?;
    Ok((base, q, s, hce))
}

/// Writes `cost_report.md` under the experiment directory and returns its text.
pub fn cli_cost_report(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<String> {
    let cfg = opts.apply(cfg);
    let (base, q, s, hce) = config_cost(&cfg)?;
    let mut text = String::new();
    for r in [&base, &q, &s, &hce.combined] {
        text.push_str(&r.to_table());
        text.push('\n');
    }
    text.push_str(&format!(
        "HCE total (S + Q equivalent) {:.1}M = {:.1}% of baseline; S only {:.1}M = {:.1}%\n",
        hce.total() / 1e6,
        100.0 * hce.ratio(),
        hce.pruned_equivalent_flops / 1e6,
        100.0 * hce.pruned_only_ratio()
    ));
    write_atomic(&cfg.out_dir.join(&cfg.name).join("cost_report.md"), text.as_bytes())?;
    Ok(text)
}

/// Regenerates every human-readable file from stored records. Idempotent.
pub fn cli_report(cfg: &ExperimentConfig, opts: &CliOptions) -> Result<Vec<PathBuf>> {
    let cfg = opts.apply(cfg);
    let mut absent = Vec::new();
    for &seed in &cfg.seeds {
        let dir = cfg.run_dir(seed).join(REPORT_DIR);
        for f in [REPORT_FILE, ERROR_SETS_FILE] {
            if !dir.join(f).exists() {
                absent.push(dir.join(f));
            }
        }
    }
    if !absent.is_empty() {
        return Err(missing(absent, "--config <config>"));
    }
    let mut written = Vec::new();
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let run_dir = cfg.run_dir(seed);
        let dir = run_dir.join(REPORT_DIR);
        let r = read_report(&run_dir)?;
        for (name, text) in [
            ("report.md", render_run_report(&r)),
            ("cost.txt", r.cost.hce.combined.to_table()),
            ("diversity.txt", r.diversity.venn_table()),
        ] {
            write_atomic(&dir.join(name), text.as_bytes())?;
            written.push(dir.join(name));
        }
        let regions = run_dir.join(REGION_DIR);
        for name in REGION_MEMBERS {
            let txt = regions.join(format!("{name}.txt"));
            if let Ok(text) = fs::read_to_string(&txt) {
                let (_, labels) = read_grid_text(&text)?;
                let png = regions.join(format!("{name}.png"));
                labels_image(&labels, cfg.region.cell_size.max(1)).save(&png)?;
                written.push(png);
            }
        }
        reports.push(r);
    }
    let summary = cfg.out_dir.join(&cfg.name).join("summary.md");
    write_atomic(&summary, render_seed_summary(&reports).as_bytes())?;
    written.push(summary);
    Ok(written)
}

/// Shared-plane check exposed for comparison tooling.
pub fn check_grids(grids: &[&crate::region::RegionGrid]) -> Result<()> {
    check_shared_plane(grids)
}
