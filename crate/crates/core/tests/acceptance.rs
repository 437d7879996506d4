//! Acceptance run: every criterion prints one PASS/FAIL line; the process fails
//! if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;

use common::HalfPlane;
use hce::cost::{count_macs, equivalent_flops};
use hce::ensemble::{diversity_report, ErrorSets};
use hce::experiment::cli::{cli_sweep_alpha, sweep_dir};
use hce::experiment::report::{ensemble_wins, render_sweep};
use hce::experiment::{CliOptions, ExperimentConfig, TOY_CONFIG};
use hce::nn::{build_model, forward, NetworkSpec};
use hce::objective::{cross_entropy, hce_loss, hce_loss_with_grad, kl_term, soften_rows, DistillTargets, HceLossConfig, TargetMode};
use hce::pipeline::{run_hce, HceReport, RunOptions, QUANTIZE_DIR};
use hce::prune::{compact, iterative_prune, Granularity, SparsitySchedule};
use hce::quant::{quantize_tensor, Scheme};
use hce::region::{check_shared_plane, compute_grid, Plane};
use hce::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn cost_golden_values() -> Outcome {
    let mut notes = Vec::new();
    for (depth, reference) in [(56, 126.8e6), (20, 41.2e6)] {
        let macs: u64 = count_macs(&NetworkSpec::residual(depth, 10, [3, 32, 32])).map_err(err)?.iter().map(|l| l.1).sum();
        let rel = (macs as f64 - reference) / reference;
        ensure(rel.abs() <= 0.02, format!("ResNet{depth} {macs} MACs is {:+.2}% off", rel * 100.0))?;
        notes.push(format!("ResNet{depth} {:.2}M ({:+.2}%)", macs as f64 / 1e6, rel * 100.0));
    }
    ensure(equivalent_flops(23) == 1.0, "equivalent_flops(23) != 1")?;
    Ok(notes.join(", ") + ", 23 BOPs = 1 FLOP")
}

fn overlap_ratio() -> Outcome {
    let q: BTreeSet<usize> = (0..1181).collect();
    let s: BTreeSet<usize> = (1181 - 401..1181 - 401 + 654).collect();
    let sets = ErrorSets { quantized: q, pruned: s, num_samples: 10_000, ..Default::default() };
    let r = diversity_report(&sets).map_err(err)?;
    let pct = r.overlap_ratio * 100.0;
    ensure((pct - 27.96).abs() <= 0.01, format!("overlap {pct:.4}%"))?;
    Ok(format!("401 / 1434 = {pct:.4}%"))
}

fn objective() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut normal = |n: usize, scale: f64| -> Vec<f64> {
        (0..n).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect()
    };
    let (n, k) = (4, 6);
    let h = 1e-5;
    // relative error with a small absolute floor so exactly-zero entries are measurable
    let floor = 1e-6;
    let (mut worst, mut worst_row_sum, mut worst_same) = (0.0f64, 0.0f64, 0.0f64);
    let mut instances = 0;
    for _ in 0..20 {
        let s = Tensor::new(vec![n, k], normal(n * k, 2.0)).map_err(err)?;
        let o = Tensor::new(vec![n, k], normal(n * k, 2.0)).map_err(err)?;
        let q = Tensor::new(vec![n, k], normal(n * k, 2.0)).map_err(err)?;
        let labels: Vec<usize> = normal(n, 1.0).iter().map(|v| (v.abs() * 1000.0) as usize % k).collect();
        for tau in [1.0, 4.0] {
            let t = DistillTargets::from_probabilities(soften_rows(&o, tau).map_err(err)?, soften_rows(&q, tau).map_err(err)?)
                .map_err(err)?;
            for i in 0..n {
                worst_row_sum = worst_row_sum.max(t.p_d.row(i).iter().sum::<f64>().abs());
            }
            let p_o = soften_rows(&o, tau).map_err(err)?;
            let same = DistillTargets::from_probabilities(p_o.clone(), p_o).map_err(err)?;
            worst_same = worst_same.max(kl_term(&same.p_d, &soften_rows(&s, tau).map_err(err)?, tau).map_err(err)?.abs());
            for alpha in [0.0, 0.3, 1.0] {
                instances += 1;
                let cfg = HceLossConfig { alpha, temperature: tau, target_mode: TargetMode::Signed };
                let b = hce_loss_with_grad(&s, &labels, &t, &cfg).map_err(err)?;
                if alpha == 1.0 {
                    let (ce, g) = cross_entropy(&s, &labels).map_err(err)?;
                    ensure(b.total == ce && b.grad == g, "alpha = 1 is not exactly cross-entropy")?;
                }
                for j in 0..s.len() {
                    let (mut up, mut dn) = (s.clone(), s.clone());
                    up.data_mut()[j] += h;
                    dn.data_mut()[j] -= h;
                    let fd = (hce_loss(&up, &labels, &t, &cfg).map_err(err)? - hce_loss(&dn, &labels, &t, &cfg).map_err(err)?)
                        / (2.0 * h);
                    let a = b.grad.data()[j];
                    worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
                }
            }
        }
    }
    ensure(worst <= 1e-4, format!("max relative gradient error {worst:.2e}"))?;
    ensure(worst_row_sum <= 1e-6, format!("p_D row sum {worst_row_sum:.2e}"))?;
    ensure(worst_same <= 1e-3, format!("|L_KL| with O = Q is {worst_same:.2e}"))?;
    Ok(format!(
        "{instances} cases, max grad rel err {worst:.2e}, max |row sum| {worst_row_sum:.1e}, max |L_KL|(O=Q) {worst_same:.1e}, alpha=1 is CE"
    ))
}

fn compression_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for t in 0..100 {
        let len = rng.random_range(1..400);
        let scale = rng.random_range(0.01..20.0);
        let values: Vec<f64> = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
        let bits = rng.random_range(2..=8u32);
        for scheme in [Scheme::Symmetric, Scheme::Asymmetric] {
            let q = quantize_tensor(&values, bits, scheme).map_err(err)?;
            let distinct: BTreeSet<u64> = q.values.iter().map(|v| v.to_bits()).collect();
            ensure(distinct.len() <= 1 << bits, format!("tensor {t}: {} values at {bits} bits", distinct.len()))?;
            let max_err = values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure(max_err <= q.scale / 2.0 * (1.0 + 1e-9), format!("tensor {t}: error {max_err} > scale/2"))?;
            let mut order: Vec<usize> = (0..len).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            ensure(order.windows(2).all(|w| q.values[w[0]] <= q.values[w[1]]), format!("tensor {t}: not monotone"))?;
            if scheme == Scheme::Symmetric {
                let again = quantize_tensor(&q.values, bits, scheme).map_err(err)?;
                ensure(again.values == q.values, format!("tensor {t}: not idempotent"))?;
            }
        }
    }
    let spec = NetworkSpec::residual(14, 5, [3, 6, 6]).with_width(0.75);
    let mut worst = 0.0f64;
    let mut filters = 0;
    for trial in 0..10u64 {
        let store = build_model(&spec, trial).map_err(err)?;
        let keep = rng.random_range(0.05..1.0);
        let sched = SparsitySchedule { target_keep_ratio: keep, steps: 1, finetune_epochs_per_step: 0, granularity: Granularity::Filter };
        let out = iterative_prune(&store, &sched, |_, _, _, _| Ok(())).map_err(err)?;
        for b in spec.blocks() {
            let want = ((keep * b.inner as f64 - 1e-9).ceil() as usize).clamp(1, b.inner);
            ensure(out.mask.kept(&b.conv1()) == Some(want), format!("{}: kept count off at keep {keep}", b.conv1()))?;
            filters += 1;
        }
        let (small, _) = compact(&out.store, &out.mask).map_err(err)?;
        let inputs: Vec<f64> = (0..100 * 108).map(|_| rng.random_range(-3.0..3.0)).collect();
        let inputs = Tensor::new(vec![100, 3, 6, 6], inputs).map_err(err)?;
        worst = worst.max(forward(&out.store, &inputs).map_err(err)?.max_abs_diff(&forward(&small, &inputs).map_err(err)?));
    }
    ensure(worst <= 1e-5, format!("masked vs compacted differ by {worst:.2e}"))?;
    Ok(format!("100 tensors x 2 schemes hold grid laws; {filters} kept counts exact; masked vs compacted max diff {worst:.1e} over 10x100 inputs"))
}

struct ToyRuns {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    reports: Vec<HceReport>,
}

fn toy_runs() -> Result<ToyRuns, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = ExperimentConfig::from_toml_str(TOY_CONFIG).map_err(err)?;
    cfg.out_dir = dir.path().to_path_buf();
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        reports.push(run_hce(&cfg.run_config(seed), &RunOptions::default()).map_err(err)?.complete().map_err(err)?.report);
    }
    Ok(ToyRuns { _dir: dir, cfg, reports })
}

fn toy_hce(runs: &ToyRuns) -> Outcome {
    let wins = runs.reports.iter().filter(|r| ensemble_wins(&r.accuracy)).count();
    let overlaps: Vec<String> = runs.reports.iter().map(|r| format!("{:.3}", r.diversity.overlap_ratio)).collect();
    let detail = runs
        .reports
        .iter()
        .map(|r| format!("{:.3}/{:.3}->{:.3}", r.accuracy.quantized, r.accuracy.pruned, r.accuracy.ensemble))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(wins >= 4, format!("ensemble >= max(Q, S) on only {wins}/5 seeds ({detail})"))?;
    ensure(runs.reports.iter().all(|r| r.diversity.overlap_ratio < 1.0), "an overlap ratio reached 1")?;
    Ok(format!("ensemble >= max(Q, S) on {wins}/5 seeds (Q/S->E: {detail}); overlap [{}]", overlaps.join(", ")))
}

fn pipeline_contracts(runs: &ToyRuns) -> Outcome {
    let run = runs.cfg.run_config(0);
    let first = &runs.reports[0];
    ensure(first.quantized_frozen, "report says Q changed")?;
    let qdir = run.out_dir.join(QUANTIZE_DIR);
    let q_bytes = fs::read(qdir.join("q.ckpt")).map_err(err)?;

    let resumed = run_hce(&run, &RunOptions { resume: true, stop_after: None }).map_err(err)?.complete().map_err(err)?;
    let restored = resumed.stage_log.iter().filter(|l| l.ends_with("restored")).count();
    let stages = 2 + run.prune.steps;
    ensure(restored == stages, format!("resume restored {restored} of {stages} stages: {:?}", resumed.stage_log))?;
    ensure(fs::read(qdir.join("q.ckpt")).map_err(err)? == q_bytes, "Q checkpoint bytes changed on resume")?;
    ensure(resumed.quantized.fingerprint() == first.fingerprints.quantized, "Q fingerprint changed")?;
    let same = |a: &HceReport, b: &HceReport| serde_json::to_value(a).ok() == serde_json::to_value(b).ok();
    ensure(same(&resumed.report, first), "resumed report differs")?;

    let other = tempfile::tempdir().map_err(err)?;
    let rerun_cfg = hce::pipeline::HceRunConfig { out_dir: other.path().to_path_buf(), ..run.clone() };
    let rerun = run_hce(&rerun_cfg, &RunOptions::default()).map_err(err)?.complete().map_err(err)?;
    ensure(same(&rerun.report, first), "fresh rerun differs")?;
    ensure(fs::read(other.path().join(QUANTIZE_DIR).join("q.ckpt")).map_err(err)? == q_bytes, "rerun Q bytes differ")?;
    Ok(format!("Q bit-identical, rerun identical, resume restored {restored}/{stages} stages"))
}

fn region_grids() -> Outcome {
    let model = HalfPlane { w: [0.8, -0.6], b: 0.07 };
    let center = Tensor::new(vec![2, 1, 1], vec![0.15, -0.2]).map_err(err)?;
    let mut cells = 0;
    for seed in 0..4 {
        let plane = Plane::random(&center, seed, 2.0, 51).map_err(err)?;
        let grid = compute_grid(&model, &plane).map_err(err)?;
        let r = 1.0 / 2f64.sqrt();
        for i in 0..51 {
            for j in 0..51 {
                let (a, b) = (2.0 * (i as f64 / 25.0 - 1.0), 2.0 * (j as f64 / 25.0 - 1.0));
                let x = 0.15 + r * (a * plane.v1[0] + b * plane.v2[0]);
                let y = -0.2 + r * (a * plane.v1[1] + b * plane.v2[1]);
                let want = usize::from(0.8 * x - 0.6 * y + 0.07 > 0.0);
                ensure(grid.labels[i][j] == want, format!("seed {seed} cell ({i},{j}) is {} not {want}", grid.labels[i][j]))?;
                cells += 1;
            }
        }
    }
    let flat = compute_grid(&model, &Plane::random(&center, 1, 0.0, 51).map_err(err)?).map_err(err)?;
    let c = flat.center_label();
    ensure(flat.labels.iter().flatten().all(|&l| l == c), "extent-0 grid is not constant")?;
    let base = compute_grid(&model, &Plane::random(&center, 1, 2.0, 21).map_err(err)?).map_err(err)?;
    for (seed, extent, res) in [(2, 2.0, 21), (1, 1.5, 21), (1, 2.0, 23)] {
        let other = compute_grid(&model, &Plane::random(&center, seed, extent, res).map_err(err)?).map_err(err)?;
        ensure(check_shared_plane(&[&base, &other]).is_err(), format!("accepted seed {seed} extent {extent} res {res}"))?;
    }
    Ok(format!("{cells} cells match the half-plane; extent 0 constant; seed/extent/resolution mismatches rejected"))
}

fn alpha_sweep() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = ExperimentConfig::from_toml_str(TOY_CONFIG).map_err(err)?;
    let opts = CliOptions { seed: None, resume: false, out: Some(dir.path().to_path_buf()) };
    let rows = cli_sweep_alpha(&cfg, &opts).map_err(err)?;
    let want: Vec<(f64, f64)> = [0.5, 0.25].iter().flat_map(|&k| [0.1, 0.3, 0.5, 0.7, 0.9].map(|a| (k, a))).collect();
    let got: Vec<(f64, f64)> = rows.iter().map(|r| (r.keep_ratio, r.alpha)).collect();
    ensure(got == want, format!("sweep grid {got:?}"))?;
    ensure(rows.iter().all(|r| r.baseline_fingerprint == rows[0].baseline_fingerprint), "O fingerprints differ")?;
    ensure(rows.iter().all(|r| r.quantized_fingerprint == rows[0].quantized_fingerprint), "Q fingerprints differ")?;
    let table = fs::read_to_string(sweep_dir(&opts.apply(&cfg), 0).join("sweep.md")).map_err(err)?;
    ensure(table == render_sweep(&rows), "stored sweep table differs from the rows")?;
    let long = table.lines().filter(|l| l.starts_with("| 0.")).count();
    let pivot = table.lines().filter(|l| l.starts_with("| keep=")).count();
    ensure(long == 10 && pivot == 2, format!("table has {long} rows and {pivot} pivot rows"))?;
    let (lo, hi) = rows.iter().fold((1.0f64, 0.0f64), |(l, h), r| (l.min(r.accuracy.ensemble), h.max(r.accuracy.ensemble)));
    Ok(format!("{} rows (5 alphas x 2 keeps) sharing one O and one Q; ensemble accuracy {lo:.3}..{hi:.3}", rows.len()))
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n} [{name}]: PASS - {detail}"),
            Err(why) => {
                failures += 1;
                println!("criterion {n} [{name}]: FAIL - {why}");
            }
        }
    };
    report(1, "cost golden values", cost_golden_values());
    report(2, "overlap ratio", overlap_ratio());
    report(3, "objective", objective());
    report(4, "compression laws", compression_laws());
    match toy_runs() {
        Ok(runs) => {
            report(5, "toy HCE", toy_hce(&runs));
            report(6, "pipeline contracts", pipeline_contracts(&runs));
        }
        Err(e) => {
            report(5, "toy HCE", Err(e.clone()));
            report(6, "pipeline contracts", Err(e));
        }
    }
    report(7, "region grids", region_grids());
    report(8, "alpha sweep", alpha_sweep());
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
