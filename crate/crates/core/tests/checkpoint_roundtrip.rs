mod common;

use hce::checkpoint::{decode_store, encode_store, load_mask, load_quantized, load_store, save_mask, save_quantized, save_store};
use hce::nn::{build_model, forward, Classifier, NetworkSpec, SyntheticConfig};
use hce::prune::{compact, iterative_prune, Granularity, SparsitySchedule};
use hce::quant::{quantize_model, QuantConfig};
use hce::Tensor;

fn inputs() -> Tensor {
    Tensor::new(vec![5, 3, 6, 6], common::lcg_values(4, 5 * 108, 2.0)).unwrap()
}

#[test]
fn compacted_models_round_trip_bit_exactly() {
    let store = build_model(&NetworkSpec::residual(8, 3, [3, 6, 6]), 21).unwrap();
    let sched = SparsitySchedule { target_keep_ratio: 0.3, steps: 1, finetune_epochs_per_step: 0, granularity: Granularity::Filter };
    let out = iterative_prune(&store, &sched, |_, _, _, _| Ok(())).unwrap();
    let (small, _) = compact(&out.store, &out.mask).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_store(&small, &dir.path().join("s.ckpt")).unwrap();
    save_mask(&out.mask, &dir.path().join("mask.json")).unwrap();
    let back = load_store(&dir.path().join("s.ckpt")).unwrap();
    assert_eq!(back.spec, small.spec);
    assert_eq!(back.content_fingerprint(), small.content_fingerprint());
    let (a, b) = (forward(&small, &inputs()).unwrap(), forward(&back, &inputs()).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(load_mask(&dir.path().join("mask.json")).unwrap(), out.mask);
}

#[test]
fn quantized_models_round_trip() {
    let store = build_model(&NetworkSpec::residual(8, 3, [3, 6, 6]), 5).unwrap();
    let data = SyntheticConfig { num_classes: 3, input_shape: [3, 6, 6], train_size: 40, test_size: 4, noise: 0.3, components_per_class: 1, seed: 1 };
    let cfg = QuantConfig { calibration_batch_size: 10, ..QuantConfig::bits(3, 4) };
    let q = quantize_model(&store, &data.generate().unwrap().0, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_quantized(&q, dir.path()).unwrap();
    let back = load_quantized(dir.path()).unwrap();
    assert_eq!(back.fingerprint(), q.fingerprint());
    assert_eq!(back.scores(&inputs()).unwrap(), q.scores(&inputs()).unwrap());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let store = build_model(&NetworkSpec::plain(8, 3, [3, 6, 6]), 2).unwrap();
    let bytes = encode_store(&store).unwrap();
    let origin = std::path::Path::new("x.ckpt");
    assert!(decode_store(&bytes, origin).is_ok());
    let mut flipped = bytes.clone();
    let last = flipped.len() - 3;
    flipped[last] ^= 0x40;
    assert!(decode_store(&flipped, origin).is_err());
    assert!(decode_store(&bytes[..bytes.len() - 8], origin).is_err());
    assert!(decode_store(b"not a checkpoint", origin).is_err());
}
