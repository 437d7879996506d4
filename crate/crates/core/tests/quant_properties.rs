mod common;

use std::collections::BTreeSet;

use hce::nn::{build_model, forward, Classifier, NetworkSpec, SyntheticConfig};
use hce::quant::{quantize_model, quantize_tensor, QuantConfig, Scheme, UniformGrid};
use proptest::prelude::*;

fn tensor() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..300)
}

fn distinct(v: &[f64]) -> usize {
    v.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn symmetric_grid_laws(values in tensor(), bits in 2u32..=8) {
        let q = quantize_tensor(&values, bits, Scheme::Symmetric).unwrap();
        prop_assert!(distinct(&q.values) <= (1usize << bits));
        let again = quantize_tensor(&q.values, bits, Scheme::Symmetric).unwrap();
        prop_assert_eq!(&again.values, &q.values);
        for (x, y) in values.iter().zip(&q.values) {
            prop_assert!((x - y).abs() <= q.scale / 2.0 * (1.0 + 1e-12));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        for w in order.windows(2) {
            prop_assert!(q.values[w[0]] <= q.values[w[1]]);
        }
    }

    #[test]
    fn asymmetric_grid_laws(values in tensor(), bits in 2u32..=8) {
        let q = quantize_tensor(&values, bits, Scheme::Asymmetric).unwrap();
        prop_assert!(distinct(&q.values) <= (1usize << bits));
        for (x, y) in values.iter().zip(&q.values) {
            prop_assert!((x - y).abs() <= q.scale / 2.0 * (1.0 + 1e-9) + 1e-12);
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        for w in order.windows(2) {
            prop_assert!(q.values[w[0]] <= q.values[w[1]]);
        }
    }

    #[test]
    fn positive_ranges_keep_every_level(lo in 0.5f64..5.0, width in 0.1f64..10.0, bits in 2u32..=6) {
        let grid = UniformGrid::asymmetric(lo, lo + width, bits);
        let levels: BTreeSet<i64> = (0..=1000).map(|i| grid.level(lo + width * i as f64 / 1000.0)).collect();
        prop_assert_eq!(levels.len(), 1usize << bits);
    }
}

#[test]
fn half_way_rounds_away_from_zero() {
    let g = UniformGrid::symmetric(3.0, 3);
    assert_eq!(g.scale, 1.0);
    assert_eq!(g.snap(0.5), 1.0);
    assert_eq!(g.snap(-0.5), -1.0);
    assert_eq!(g.snap(2.5), 3.0);
    assert_eq!(g.snap(9.0), 3.0);
}

#[test]
fn rejects_bad_inputs() {
    assert!(quantize_tensor(&[1.0], 1, Scheme::Symmetric).unwrap_err().is_config());
    assert!(quantize_tensor(&[f64::NAN], 4, Scheme::Symmetric).is_err());
    let zeros = quantize_tensor(&[0.0; 4], 3, Scheme::Symmetric).unwrap();
    assert_eq!(zeros.values, vec![0.0; 4]);
}

fn toy() -> (hce::nn::ParameterStore, hce::nn::Dataset) {
    let spec = NetworkSpec::residual(8, 4, [3, 6, 6]).with_width(0.5);
    let data = SyntheticConfig {
        num_classes: 4,
        input_shape: [3, 6, 6],
        train_size: 64,
        test_size: 16,
        noise: 0.5,
        components_per_class: 1,
        seed: 3,
    };
    (build_model(&spec, 11).unwrap(), data.generate().unwrap().0)
}

fn small_calibration(bits: u32) -> QuantConfig {
    QuantConfig { calibration_batch_size: 16, ..QuantConfig::bits(bits, bits) }
}

#[test]
fn model_quantization_is_deterministic_and_leaves_source_alone() {
    let (model, data) = toy();
    let before = model.content_fingerprint();
    let cfg = small_calibration(3);
    let a = quantize_model(&model, &data, &cfg).unwrap();
    let b = quantize_model(&model, &data, &cfg).unwrap();
    assert_eq!(model.content_fingerprint(), before);
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(a.scores(&data.inputs).unwrap(), b.scores(&data.inputs).unwrap());
    for layer in model.spec.layers() {
        let key = hce::nn::spec::weight_key(&layer.name);
        let w = a.grid_weights.param(&key);
        assert!(distinct(w.data()) <= 8, "{key}");
        let scale = a.scales[&key];
        for v in w.data() {
            let l = v / scale;
            assert!((l - l.round()).abs() < 1e-9 && l.abs() <= 3.0 + 1e-9);
        }
    }
    // non-weight parameters stay in float
    for (k, t) in model.iter().filter(|(k, _)| !k.ends_with(".weight")) {
        assert_eq!(a.grid_weights.param(k), t);
    }
}

#[test]
fn exempt_layers_stay_full_precision() {
    let (model, data) = toy();
    let mut cfg = small_calibration(2);
    cfg.exempt_first_last = true;
    let q = quantize_model(&model, &data, &cfg).unwrap();
    let layers = model.spec.layers();
    for l in [&layers[0], layers.last().unwrap()] {
        let key = hce::nn::spec::weight_key(&l.name);
        assert_eq!(q.grid_weights.param(&key), model.param(&key));
        assert!(!q.activation_ranges.contains_key(&l.name));
    }
    assert!(q.activation_ranges.contains_key(&layers[1].name));
}

#[test]
fn wide_grids_approach_float_model() {
    let (model, data) = toy();
    let float = forward(&model, &data.inputs).unwrap();
    let err = |bits| {
        let q = quantize_model(&model, &data, &small_calibration(bits)).unwrap();
        q.scores(&data.inputs).unwrap().max_abs_diff(&float)
    };
    let (e2, e8, e16) = (err(2), err(8), err(16));
    assert!(e16 < e8 && e8 < e2, "{e2} {e8} {e16}");
    assert!(e16 < 1e-3);
}
