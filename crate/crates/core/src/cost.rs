//! Analytic compute cost: MACs, FLOPs, bit operations, and Float32-equivalent FLOPs.
//!
//! Conventions: one multiply-accumulate is one FLOP (this reproduces the usual
//! 41.2M / 126.8M counts for ResNet20 / ResNet56 on 32×32 inputs); a quantized
//! layer costs `MACs · b_w · b_a` bit operations, and bit operations are
//! converted to Float32-equivalent FLOPs by dividing by 23, the number of
//! fraction bits in a Float32. Additions, normalization and activations are not
//! counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::spec::{weight_key, LayerKind};
use crate::nn::NetworkSpec;
use crate::prune::{Granularity, PruneMask};
use crate::quant::QuantConfig;

pub const FLOAT32_FRACTION_BITS: f64 = 23.0;

/// Per-layer multiply-accumulates, in layer order.
pub fn count_macs(spec: &NetworkSpec) -> Result<Vec<(String, u64)>> {
    spec.validate()?;
    Ok(spec
        .layers()
        .into_iter()
        .map(|l| {
            let macs = match l.kind {
                LayerKind::Conv { kernel, .. } => {
                    (l.in_channels * l.out_channels * kernel * kernel * l.out_hw.0 * l.out_hw.1) as u64
                }
                LayerKind::Linear => (l.in_channels * l.out_channels) as u64,
            };
            (l.name, macs)
        })
        .collect())
}

pub fn total_macs(spec: &NetworkSpec) -> Result<u64> {
    Ok(count_macs(spec)?.iter().map(|(_, m)| m).sum())
}

pub fn bops_of_quantized(macs: u64, weight_bits: u32, activation_bits: u32) -> Result<u64> {
    if weight_bits < 2 || activation_bits < 2 {
        return Err(Error::input(format!("bit widths must be >= 2 (got {weight_bits}/{activation_bits})")));
    }
    Ok(macs * weight_bits as u64 * activation_bits as u64)
}

pub fn equivalent_flops(bops: u64) -> f64 {
    bops as f64 / FLOAT32_FRACTION_BITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: String,
    pub macs: u64,
    pub flops: u64,
    /// `(weight, activation)` bits when the layer runs quantized.
    pub bits: Option<(u32, u32)>,
    pub bops: u64,
    pub equivalent_flops: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    pub macs: u64,
    pub flops: u64,
    pub bops: u64,
    pub equivalent_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub name: String,
    pub rows: Vec<LayerCost>,
    pub totals: CostTotals,
    /// FLOPs of the reference model, when one was named.
    pub baseline: Option<(String, f64)>,
}

fn totals_of(rows: &[LayerCost]) -> CostTotals {
    rows.iter().fold(CostTotals::default(), |t, r| CostTotals {
        macs: t.macs + r.macs,
        flops: t.flops + r.flops,
        bops: t.bops + r.bops,
        equivalent_flops: t.equivalent_flops + r.equivalent_flops,
    })
}

fn float_row(layer: String, macs: u64) -> LayerCost {
    LayerCost { layer, macs, flops: macs, bits: None, bops: 0, equivalent_flops: macs as f64 }
}

impl CostReport {
    pub fn from_rows(name: impl Into<String>, rows: Vec<LayerCost>) -> Self {
        let totals = totals_of(&rows);
        Self { name: name.into(), rows, totals, baseline: None }
    }

    /// Full-precision model; a compacted spec gives the pruned cost.
    pub fn float(name: impl Into<String>, spec: &NetworkSpec) -> Result<Self> {
        let rows = count_macs(spec)?.into_iter().map(|(l, m)| float_row(l, m)).collect();
        Ok(Self::from_rows(name, rows))
    }

    /// Unstructured or filter mask applied to a dense spec. Weight masks scale each
    /// layer by its kept fraction; filter masks cost the same as the compacted spec.
    pub fn masked(name: impl Into<String>, spec: &NetworkSpec, mask: &PruneMask) -> Result<Self> {
        let rows = match mask.granularity {
            Granularity::Filter => {
                let inner = spec
                    .blocks()
                    .iter()
                    .map(|b| mask.kept(&b.conv1()).unwrap_or(b.inner))
                    .collect();
                let compacted = NetworkSpec { inner_widths: Some(inner), ..spec.clone() };
                return Self::float(name, &compacted);
            }
            Granularity::Weight => count_macs(spec)?
                .into_iter()
                .map(|(l, m)| {
                    let m = match mask.layers.get(&weight_key(&l)) {
                        Some(keep) if !keep.is_empty() => {
                            let kept = keep.iter().filter(|&&k| k).count() as u64;
                            // MACs per weight is an integer (the output spatial size).
                            m / keep.len() as u64 * kept
                        }
                        _ => m,
                    };
                    float_row(l, m)
                })
                .collect(),
        };
        Ok(Self::from_rows(name, rows))
    }

    /// Quantized model: quantized layers are costed in bit operations, exempt layers as float.
    pub fn quantized(name: impl Into<String>, spec: &NetworkSpec, cfg: &QuantConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rows = Vec::new();
        for (layer, macs) in count_macs(spec)? {
            if cfg.quantizes(&layer) {
                let bops = bops_of_quantized(macs, cfg.weight_bits, cfg.activation_bits)?;
                rows.push(LayerCost {
                    layer,
                    macs,
                    flops: macs,
                    bits: Some((cfg.weight_bits, cfg.activation_bits)),
                    bops,
                    equivalent_flops: equivalent_flops(bops),
                });
            } else {
                rows.push(float_row(layer, macs));
            }
        }
        Ok(Self::from_rows(name, rows))
    }

    pub fn with_baseline(mut self, baseline: &CostReport) -> Self {
        self.baseline = Some((baseline.name.clone(), baseline.totals.flops as f64));
        self
    }

    /// Equivalent FLOPs relative to the baseline's FLOPs.
    pub fn ratio(&self) -> Option<f64> {
        self.baseline.as_ref().map(|(_, f)| self.totals.equivalent_flops / f)
    }

    /// One row per layer, then a `# totals` footer readable by [`parse_totals_footer`].
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# cost report: {}", self.name);
        let _ = writeln!(out, "layer\tmacs\tflops\tbits\tbops\tequivalent_flops");
        for r in &self.rows {
            let bits = r.bits.map_or("fp".to_string(), |(w, a)| format!("{w}/{a}"));
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{:.1}", r.layer, r.macs, r.flops, bits, r.bops, r.equivalent_flops);
        }
        let t = &self.totals;
        let _ = write!(
            out,
            "# totals macs={} flops={} bops={} equivalent_flops={}",
            t.macs, t.flops, t.bops, t.equivalent_flops
        );
        if let (Some((name, flops)), Some(ratio)) = (&self.baseline, self.ratio()) {
            let _ = write!(out, " baseline={name} baseline_flops={flops} ratio={ratio}");
        }
        out.push('\n');
        out
    }
}

/// Reads the totals back from [`CostReport::to_table`] output.
pub fn parse_totals_footer(table: &str) -> Result<CostTotals> {
    let line = table
        .lines()
        .rev()
        .find(|l| l.starts_with("# totals "))
        .ok_or_else(|| Error::input("cost table has no '# totals' footer"))?;
    let mut t = CostTotals::default();
    for field in line["# totals ".len()..].split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| Error::input(format!("malformed footer field '{field}'")))?;
        let bad = |_| Error::input(format!("malformed footer value '{field}'"));
        match k {
            "macs" => t.macs = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "flops" => t.flops = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "bops" => t.bops = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "equivalent_flops" => {
                t.equivalent_flops = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
            }
            _ => {}
        }
    }
    Ok(t)
}

/// Cost of the two-member ensemble. Whether the quantized member's equivalent
/// FLOPs belong in the headline number is ambiguous, so both totals are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HceCost {
    /// Rows of both members, prefixed `S/` and `Q/`.
    pub combined: CostReport,
    pub pruned_equivalent_flops: f64,
    pub quantized_equivalent_flops: f64,
    pub baseline_flops: f64,
}

impl HceCost {
    pub fn total(&self) -> f64 {
        self.pruned_equivalent_flops + self.quantized_equivalent_flops
    }
    pub fn ratio(&self) -> f64 {
        self.total() / self.baseline_flops
    }
    pub fn pruned_only_ratio(&self) -> f64 {
        self.pruned_equivalent_flops / self.baseline_flops
    }
}

pub fn hce_cost(pruned: &CostReport, quantized: Option<&CostReport>, baseline: &CostReport) -> Result<HceCost> {
    for (name, r) in [("pruned", Some(pruned)), ("quantized", quantized)] {
        if let Some(r) = r {
            if let Some((b, _)) = &r.baseline {
                if b != &baseline.name {
                    return Err(Error::input(format!(
                        "{name} report is relative to '{b}', not '{}'",
                        baseline.name
                    )));
                }
            }
        }
    }
    let prefixed = |prefix: &str, r: &CostReport| {
        r.rows.iter().map(move |row| LayerCost { layer: format!("{prefix}/{}", row.layer), ..row.clone() }).collect::<Vec<_>>()
    };
    let mut rows = prefixed("S", pruned);
    if let Some(q) = quantized {
        rows.extend(prefixed("Q", q));
    }
    let combined = CostReport::from_rows("hce", rows).with_baseline(baseline);
    Ok(HceCost {
        combined,
        pruned_equivalent_flops: pruned.totals.equivalent_flops,
        quantized_equivalent_flops: quantized.map_or(0.0, |q| q.totals.equivalent_flops),
        baseline_flops: baseline.totals.flops as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resnet(depth: usize) -> NetworkSpec {
        NetworkSpec::residual(depth, 10, [3, 32, 32])
    }

    #[test]
    fn stem_conv_macs() {
        let macs = count_macs(&resnet(20)).unwrap();
        assert_eq!(macs[0], ("stem.conv".to_string(), 442_368));
    }

    #[test]
    fn bops_and_equivalents() {
        assert_eq!(bops_of_quantized(1000, 3, 3).unwrap(), 9000);
        assert_eq!(bops_of_quantized(7, 32, 32).unwrap(), 7 * 1024);
        assert_eq!(bops_of_quantized(0, 4, 4).unwrap(), 0);
        assert!(bops_of_quantized(10, 1, 8).is_err());
        assert_eq!(equivalent_flops(23), 1.0);
        assert_eq!(equivalent_flops(0), 0.0);
        assert!((equivalent_flops(9000) - 391.304).abs() < 1e-3);
    }

    #[test]
    fn baseline_alone_has_unit_ratio() {
        let base = CostReport::float("O", &resnet(20)).unwrap();
        let s = CostReport::float("S", &resnet(20)).unwrap().with_baseline(&base);
        let h = hce_cost(&s, None, &base).unwrap();
        assert_eq!(h.ratio(), 1.0);
    }

    #[test]
    fn footer_round_trips() {
        let base = CostReport::float("O", &resnet(20)).unwrap();
        let q = CostReport::quantized("Q", &resnet(20), &QuantConfig::bits(3, 3)).unwrap().with_baseline(&base);
        assert_eq!(parse_totals_footer(&q.to_table()).unwrap(), q.totals);
        assert!(parse_totals_footer("layer\tmacs\n").is_err());
    }
}
