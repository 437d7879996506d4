#![allow(dead_code)]

use hce::experiment::{ExperimentConfig, TOY_CONFIG};
use hce::nn::Classifier;
use hce::{Result, Tensor};

/// Toy config shrunk so a full pipeline run takes a couple of seconds.
pub fn small_config(out: &std::path::Path) -> ExperimentConfig {
    let text = TOY_CONFIG
        .replace("train_size = 2000", "train_size = 600")
        .replace("test_size = 1000", "test_size = 300")
        .replace("epochs = 6", "epochs = 2")
        .replace("lr_milestones = [4]", "lr_milestones = []")
        .replace("[finetune]\nepochs = 2", "[finetune]\nepochs = 1")
        .replace("resolution = 51", "resolution = 11");
    let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg.seeds = vec![0];
    cfg
}

/// Two-input linear classifier: class 1 iff `w·x + b > 0`.
pub struct HalfPlane {
    pub w: [f64; 2],
    pub b: f64,
}

impl Classifier for HalfPlane {
    fn num_classes(&self) -> usize {
        2
    }
    fn input_shape(&self) -> [usize; 3] {
        [2, 1, 1]
    }
    fn scores(&self, inputs: &Tensor) -> Result<Tensor> {
        let data = (0..inputs.rows())
            .flat_map(|i| {
                let x = inputs.row(i);
                [0.0, self.w[0] * x[0] + self.w[1] * x[1] + self.b]
            })
            .collect();
        Tensor::new(vec![inputs.rows(), 2], data)
    }
    fn fingerprint(&self) -> String {
        format!("halfplane-{:?}-{}", self.w, self.b)
    }
}

/// Deterministic pseudo-random reals in [-scale, scale) from a tiny LCG, so test
/// data does not depend on the crate's own RNG plumbing.
pub fn lcg_values(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
        })
        .collect()
}
