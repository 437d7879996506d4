//! Post-training uniform quantization of a small trained convnet at several bit widths.

use hce::checkpoint::{load_quantized, save_quantized};
use hce::nn::{evaluate, train_baseline, NetworkSpec, SyntheticConfig, TrainConfig};
use hce::quant::{quantize_model, quantize_tensor, QuantConfig, Scheme};

fn main() -> hce::Result<()> {
    let q = quantize_tensor(&[0.9, -0.3, 0.05, 0.7], 3, Scheme::Symmetric)?;
    println!("3-bit symmetric: scale {:.4} values {:?}", q.scale, q.values);

    let (train, test) = SyntheticConfig {
        num_classes: 10,
        input_shape: [3, 8, 8],
        train_size: 1000,
        test_size: 500,
        noise: 1.5,
        components_per_class: 2,
        seed: 1,
    }
    .generate()?;
    let spec = NetworkSpec::plain(8, 10, [3, 8, 8]).with_width(0.5);
    let (o, _) = train_baseline(&spec, &train, &TrainConfig { epochs: 4, ..Default::default() })?;
    println!("full precision: {:.3}", evaluate(&o, &test)?.accuracy);
    for bits in [8, 4, 3, 2] {
        let qm = quantize_model(&o, &train, &QuantConfig::bits(bits, bits))?;
        println!("{bits}/{bits}-bit: {:.3}", evaluate(&qm, &test)?.accuracy);
    }

    let qm = quantize_model(&o, &train, &QuantConfig::bits(3, 3))?;
    let dir = std::env::temp_dir().join("hce_quantize_example");
    save_quantized(&qm, &dir)?;
    let back = load_quantized(&dir)?;
    println!("reloaded Q has the same fingerprint: {}", back.fingerprint() == qm.fingerprint());
    Ok(())
}
