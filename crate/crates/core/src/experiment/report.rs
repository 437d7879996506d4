//! Text rendering of stored run records. Nothing here computes results; it
//! only formats numbers from raw records and takes ratios.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pipeline::{HceReport, MemberAccuracies};

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn flops_cell(flops: f64, baseline: f64) -> String {
    let m = flops / 1e6;
    let value = if m >= 10.0 { format!("{m:.1}") } else { format!("{m:.4}") };
    format!("{value} ({:.1}%)", 100.0 * flops / baseline)
}

/// Accuracy / FLOPs table for one run, one row per member and ensemble variant,
/// followed by the error-overlap summary.
pub fn render_run_report(r: &HceReport) -> String {
    let base = r.cost.baseline.totals.flops as f64;
    let hce = &r.cost.hce;
    let rows = [
        ("Baseline O".to_string(), r.accuracy.baseline, base),
        (
            format!("Quantized Q ({}/{}-bit)", r.weight_bits, r.activation_bits),
            r.accuracy.quantized,
            r.cost.quantized.totals.equivalent_flops,
        ),
        (format!("Pruned S (keep {})", r.keep_ratio), r.accuracy.pruned, r.cost.pruned.totals.equivalent_flops),
        ("HCE (S + Q)".to_string(), r.accuracy.ensemble, hce.total()),
        ("HCE (S only)".to_string(), r.accuracy.ensemble, hce.pruned_equivalent_flops),
    ];
    let mut out = String::new();
    let _ = writeln!(out, "# HCE run, seed {}", r.seed);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "alpha={} temperature={} granularity={:?} ensemble={:?} test_samples={}",
        r.alpha, r.temperature, r.granularity, r.ensemble_mode, r.test_samples
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "| Approach | Accuracy (%) | FLOPs (M) |");
    let _ = writeln!(out, "|---|---|---|");
    for (name, acc, flops) in rows {
        let _ = writeln!(out, "| {name} | {} | {} |", pct(acc), flops_cell(flops, base));
    }
    let d = &r.diversity;
    let _ = writeln!(out);
    let _ = writeln!(out, "| Errors | Count |");
    let _ = writeln!(out, "|---|---|");
    for (name, n) in [
        ("E_O", d.baseline_errors),
        ("E_Q", d.quantized_errors),
        ("E_S", d.pruned_errors),
        ("E_Q ∩ E_S", d.intersection),
        ("E_Q ∪ E_S", d.union),
        ("E_ensemble", d.ensemble_errors),
    ] {
        let _ = writeln!(out, "| {name} | {n} |");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "overlap ratio |E_Q ∩ E_S| / |E_Q ∪ E_S| = {}%", pct(d.overlap_ratio));
    let _ = writeln!(out, "ensemble corrects {}% of E_Q ∪ E_S and {}% of E_Q \\ E_S", pct(d.corrected_fraction), pct(d.corrected_q_only_fraction));
    let _ = writeln!(out, "Q frozen through pruning: {}", r.quantized_frozen);
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// One row per seed plus the count of seeds where the ensemble matches or beats both members.
pub fn render_seed_summary(reports: &[HceReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| Seed | O | Q | S | Ensemble | Ensemble >= max(Q, S) | Overlap |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    let mut wins = 0;
    for r in reports {
        let a = &r.accuracy;
        let win = ensemble_wins(a);
        wins += win as usize;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.seed,
            pct(a.baseline),
            pct(a.quantized),
            pct(a.pruned),
            pct(a.ensemble),
            if win { "yes" } else { "no" },
            pct(r.diversity.overlap_ratio)
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "ensemble >= max(Q, S) on {wins} of {} seeds", reports.len());
    out
}

pub fn ensemble_wins(a: &MemberAccuracies) -> bool {
    a.ensemble >= a.quantized.max(a.pruned)
}

/// One point of an α sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub keep_ratio: f64,
    pub alpha: f64,
    pub accuracy: MemberAccuracies,
    pub overlap_ratio: f64,
    pub baseline_fingerprint: String,
    pub quantized_fingerprint: String,
    pub pruned_fingerprint: String,
}

/// Long-form table (one row per point) and an ensemble-accuracy grid with
/// keep ratios as rows and α as columns.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| keep | alpha | O | Q | S | Ensemble | Overlap | O fp | Q fp |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|");
    for r in rows {
        let a = &r.accuracy;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.keep_ratio,
            r.alpha,
            pct(a.baseline),
            pct(a.quantized),
            pct(a.pruned),
            pct(a.ensemble),
            pct(r.overlap_ratio),
            r.baseline_fingerprint,
            r.quantized_fingerprint
        );
    }
    let mut keeps: Vec<f64> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    for r in rows {
        if !keeps.contains(&r.keep_ratio) {
            keeps.push(r.keep_ratio);
        }
        if !alphas.contains(&r.alpha) {
            alphas.push(r.alpha);
        }
    }
    let _ = writeln!(out);
    let _ = write!(out, "| ensemble accuracy (%) |");
    for a in &alphas {
        let _ = write!(out, " alpha={a} |");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "|---|{}", "---|".repeat(alphas.len()));
    for k in &keeps {
        let _ = write!(out, "| keep={k} |");
        for a in &alphas {
            let cell = rows
                .iter()
                .find(|r| r.keep_ratio == *k && r.alpha == *a)
                .map_or("-".to_string(), |r| pct(r.accuracy.ensemble));
            let _ = write!(out, " {cell} |");
        }
        let _ = writeln!(out);
    }
    out
}
