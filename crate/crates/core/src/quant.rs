//! Post-training uniform quantization, simulated in real arithmetic.
//!
//! Weights use a symmetric per-tensor grid `scale · q`, `|q| <= 2^(b-1) - 1`.
//! Activations entering every conv/linear layer use an asymmetric per-tensor
//! grid over the min/max range seen during calibration. Rounding is half away
//! from zero.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::network::{forward_with_hook, ActivationHook};
use crate::nn::spec::{weight_key, CLASSIFIER, STEM_CONV};
use crate::nn::store::short_hex;
use crate::nn::{Batch, Classifier, Dataset, ParameterStore};
use crate::tensor::Tensor;

/// Width added to a calibrated range whose min equals its max.
pub const DEGENERATE_RANGE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    SymmetricPerTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationScheme {
    /// Asymmetric grid over the calibrated min/max.
    #[default]
    AsymmetricMinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantConfig {
    pub weight_bits: u32,
    pub activation_bits: u32,
    #[serde(default = "defaults::calibration_batches")]
    pub calibration_batches: usize,
    #[serde(default = "defaults::calibration_batch_size")]
    pub calibration_batch_size: usize,
    /// Keep the stem conv and the classifier in full precision.
    #[serde(default)]
    pub exempt_first_last: bool,
    #[serde(default)]
    pub weight_scheme: WeightScheme,
    #[serde(default)]
    pub activation_scheme: ActivationScheme,
}

mod defaults {
    pub fn calibration_batches() -> usize {
        4
    }
    pub fn calibration_batch_size() -> usize {
        128
    }
}

impl QuantConfig {
    pub fn bits(weight_bits: u32, activation_bits: u32) -> Self {
        Self {
            weight_bits,
            activation_bits,
            calibration_batches: defaults::calibration_batches(),
            calibration_batch_size: defaults::calibration_batch_size(),
            exempt_first_last: false,
            weight_scheme: WeightScheme::default(),
            activation_scheme: ActivationScheme::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.weight_bits)?;
        check_bits(self.activation_bits)?;
        if self.calibration_batches == 0 || self.calibration_batch_size == 0 {
            return Err(Error::config("calibration_batches and calibration_batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn quantizes(&self, layer: &str) -> bool {
        !(self.exempt_first_last && (layer == STEM_CONV || layer == CLASSIFIER))
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if !(2..=32).contains(&bits) {
        return Err(Error::config(format!("bit width must lie in [2, 32] (got {bits})")));
    }
    Ok(())
}

/// Uniform grid `(q − zero_point) · scale` for integer `q ∈ [qmin, qmax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub scale: f64,
    pub zero_point: i64,
    pub qmin: i64,
    pub qmax: i64,
}

impl UniformGrid {
    /// Symmetric grid reaching `±max_abs`; all-zero tensors get scale 1.
    pub fn symmetric(max_abs: f64, bits: u32) -> Self {
        let levels = ((1u64 << (bits - 1)) - 1) as f64;
        let scale = if max_abs > 0.0 { stable_scale(max_abs / levels, levels) } else { 1.0 };
        let l = levels as i64;
        Self { scale, zero_point: 0, qmin: -l, qmax: l }
    }

    /// Asymmetric grid over `[min, max]` with `2^bits` levels. The zero point is
    /// not clamped, so ranges that exclude zero keep all their levels.
    pub fn asymmetric(min: f64, max: f64, bits: u32) -> Self {
        let qmax = ((1u64 << bits) - 1) as i64;
        let scale = (max - min) / qmax as f64;
        let zero_point = (-min / scale).round() as i64;
        Self { scale, zero_point, qmin: 0, qmax }
    }

    pub fn level(&self, v: f64) -> i64 {
        ((v / self.scale).round() as i64 + self.zero_point).clamp(self.qmin, self.qmax)
    }

    pub fn snap(&self, v: f64) -> f64 {
        (self.level(v) - self.zero_point) as f64 * self.scale
    }
}

/// Nudges `scale` to a fixed point of `s ↦ (levels·s)/levels` so re-deriving the
/// scale from an already-quantized tensor reproduces it bit for bit.
fn stable_scale(mut scale: f64, levels: f64) -> f64 {
    for _ in 0..8 {
        let next = (levels * scale) / levels;
        if next == scale {
            break;
        }
        scale = next;
    }
    scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Symmetric,
    /// Grid over the tensor's own min/max.
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub values: Vec<f64>,
    pub scale: f64,
    pub zero_point: i64,
}

pub fn quantize_tensor(values: &[f64], bits: u32, scheme: Scheme) -> Result<QuantizedTensor> {
    check_bits(bits)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("cannot quantize non-finite values"));
    }
    let grid = match scheme {
        Scheme::Symmetric => UniformGrid::symmetric(values.iter().fold(0.0, |m, v| m.max(v.abs())), bits),
        Scheme::Asymmetric => {
            let (lo, hi) = min_max(values);
            let (lo, hi) = if lo < hi { (lo, hi) } else { (lo, lo + DEGENERATE_RANGE_EPS) };
            UniformGrid::asymmetric(lo, hi, bits)
        }
    };
    Ok(QuantizedTensor {
        values: values.iter().map(|&v| grid.snap(v)).collect(),
        scale: grid.scale,
        zero_point: grid.zero_point,
    })
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub ranges: IndexMap<String, ActivationRange>,
    pub warnings: Vec<String>,
}

struct RangeRecorder {
    ranges: IndexMap<String, (f64, f64)>,
}

impl ActivationHook for RangeRecorder {
    fn before_layer(&mut self, layer: &str, input: &mut Tensor) -> Result<()> {
        let (lo, hi) = min_max(input.data());
        let slot = self.ranges.entry(layer.to_string()).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        slot.0 = slot.0.min(lo);
        slot.1 = slot.1.max(hi);
        Ok(())
    }
}

/// Min/max of every weight layer's input over the first `cfg.calibration_batches` batches.
pub fn calibrate(model: &ParameterStore, batches: &[Batch], cfg: &QuantConfig) -> Result<Calibration> {
    cfg.validate()?;
    if batches.len() < cfg.calibration_batches {
        return Err(Error::input(format!(
            "calibration needs {} batches, {} available",
            cfg.calibration_batches,
            batches.len()
        )));
    }
    let mut rec = RangeRecorder { ranges: IndexMap::new() };
    for batch in &batches[..cfg.calibration_batches] {
        forward_with_hook(model, &batch.inputs, &mut rec)?;
    }
    let mut out = Calibration::default();
    for (layer, (lo, hi)) in rec.ranges {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Numeric("non-finite calibration activation".into()).in_layer(layer));
        }
        let max = if lo == hi {
            let msg = format!("layer `{layer}`: constant activation {lo}, range widened by {DEGENERATE_RANGE_EPS}");
            log::warn!("{msg}");
            out.warnings.push(msg);
            lo + DEGENERATE_RANGE_EPS
        } else {
            hi
        };
        out.ranges.insert(layer, ActivationRange { min: lo, max });
    }
    Ok(out)
}

/// Weights on per-tensor grids plus calibrated activation ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub grid_weights: ParameterStore,
    /// Per quantized weight tensor.
    pub scales: IndexMap<String, f64>,
    pub zero_points: IndexMap<String, i64>,
    /// Per layer whose input is quantized.
    pub activation_ranges: IndexMap<String, ActivationRange>,
    pub config: QuantConfig,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// The first `n` chunks of `size` samples, in dataset order.
pub fn leading_batches(data: &Dataset, size: usize, n: usize) -> Vec<Batch> {
    data.batch_indices(size, None).into_iter().take(n).map(|idx| data.batch(&idx)).collect()
}

/// Snaps every conv/linear weight tensor to its grid, then calibrates activation
/// ranges on the grid-weight model. `model` is not modified.
pub fn quantize_model(model: &ParameterStore, data: &Dataset, cfg: &QuantConfig) -> Result<QuantizedModel> {
    cfg.validate()?;
    let mut grid_weights = model.clone();
    let mut scales = IndexMap::new();
    let mut zero_points = IndexMap::new();
    for layer in model.spec.layers() {
        if !cfg.quantizes(&layer.name) {
            continue;
        }
        let key = weight_key(&layer.name);
        let w = model.param(&key);
        let q = quantize_tensor(w.data(), cfg.weight_bits, Scheme::Symmetric).map_err(|e| e.in_layer(&layer.name))?;
        grid_weights.set(&key, Tensor::new(w.shape().to_vec(), q.values)?)?;
        scales.insert(key.clone(), q.scale);
        zero_points.insert(key, q.zero_point);
    }
    let batches = leading_batches(data, cfg.calibration_batch_size, cfg.calibration_batches);
    let mut calib = calibrate(&grid_weights, &batches, cfg)?;
    calib.ranges.retain(|layer, _| cfg.quantizes(layer));
    Ok(QuantizedModel {
        grid_weights,
        scales,
        zero_points,
        activation_ranges: calib.ranges,
        config: cfg.clone(),
        warnings: calib.warnings,
    })
}

struct ActivationSnapper<'a> {
    model: &'a QuantizedModel,
}

impl ActivationHook for ActivationSnapper<'_> {
    fn before_layer(&mut self, layer: &str, input: &mut Tensor) -> Result<()> {
        if let Some(r) = self.model.activation_ranges.get(layer) {
            let grid = UniformGrid::asymmetric(r.min, r.max, self.model.config.activation_bits);
            input.map_inplace(|v| grid.snap(v));
        }
        Ok(())
    }
}

/// Forward on the grid weights with each layer's input snapped to its activation grid.
pub fn forward_quantized(q: &QuantizedModel, inputs: &Tensor) -> Result<Tensor> {
    forward_with_hook(&q.grid_weights, inputs, &mut ActivationSnapper { model: q })
}

impl QuantizedModel {
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.grid_weights.content_fingerprint().as_bytes());
        h.update(serde_json::to_vec(&(&self.scales, &self.zero_points, &self.activation_ranges, &self.config)).expect("serializable"));
        short_hex(h)
    }
}

impl Classifier for QuantizedModel {
    fn num_classes(&self) -> usize {
        self.grid_weights.spec.num_classes
    }
    fn input_shape(&self) -> [usize; 3] {
        self.grid_weights.spec.input_shape
    }
    fn scores(&self, inputs: &Tensor) -> Result<Tensor> {
        forward_quantized(self, inputs)
    }
    fn fingerprint(&self) -> String {
        QuantizedModel::fingerprint(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_bit_symmetric_example() {
        let q = quantize_tensor(&[-1.0, 0.5, 0.25], 3, Scheme::Symmetric).unwrap();
        assert!((q.scale - 1.0 / 3.0).abs() < 1e-12);
        let want = [-1.0, 0.6667, 0.3333];
        for (a, b) in q.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn on_grid_values_are_unchanged() {
        let s = quantize_tensor(&[0.7, -0.2], 4, Scheme::Symmetric).unwrap().scale;
        let v = [-s, 0.0, s, 7.0 * s];
        let q = quantize_tensor(&v, 4, Scheme::Symmetric).unwrap();
        assert_eq!(q.values, v.to_vec());
    }

    #[test]
    fn all_zero_tensor_gets_unit_scale() {
        let q = quantize_tensor(&[0.0; 5], 3, Scheme::Symmetric).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thirty_two_bits_is_nearly_lossless() {
        let v: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.37).sin()).collect();
        let q = quantize_tensor(&v, 32, Scheme::Symmetric).unwrap();
        let worst = v.iter().zip(&q.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 2f64.powi(-30), "{worst}");
    }

    #[test]
    fn bit_width_bounds() {
        assert!(quantize_tensor(&[1.0], 1, Scheme::Symmetric).is_err());
        assert!(quantize_tensor(&[1.0], 33, Scheme::Symmetric).is_err());
        assert!(quantize_tensor(&[f64::INFINITY], 4, Scheme::Symmetric).is_err());
    }

    #[test]
    fn two_bit_activation_grid_enumerated() {
        let grid = UniformGrid::asymmetric(0.0, 3.0, 2);
        // levels {0, 1, 2, 3}
        let levels: Vec<f64> = (0..4).map(|q| (q - grid.zero_point) as f64 * grid.scale).collect();
        assert_eq!(levels, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(grid.snap(1.4), 1.0);
        assert_eq!(grid.snap(2.5), 3.0);
        assert_eq!(grid.snap(-5.0), 0.0);
        assert_eq!(grid.snap(9.0), 3.0);
    }

    #[test]
    fn asymmetric_range_away_from_zero_keeps_levels() {
        let grid = UniformGrid::asymmetric(1.0, 1.0 + DEGENERATE_RANGE_EPS, 8);
        assert!((grid.snap(1.0) - 1.0).abs() <= grid.scale);
        let grid = UniformGrid::asymmetric(2.0, 5.0, 2);
        assert_eq!(grid.snap(3.2), 3.0);
    }

    #[test]
    fn asymmetric_constant_tensor_is_widened() {
        let q = quantize_tensor(&[2.0, 2.0], 4, Scheme::Asymmetric).unwrap();
        assert!(q.values.iter().all(|v| (v - 2.0).abs() <= q.scale));
    }
}
