//! Labeled image datasets: a synthetic Gaussian mixture for fast runs and a
//! reader for the CIFAR-10 binary distribution.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// N×C×H×W inputs with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// A slice of a dataset fed through the network in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 4 || inputs.rows() == 0 {
            return Err(Error::input(format!("batch inputs must be N×C×H×W with N >= 1, got {:?}", inputs.shape())));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::input(format!("{} labels for {} inputs", labels.len(), inputs.rows())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::input(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let batch = Batch::new(inputs, labels, num_classes)?;
        Ok(Self { inputs: batch.inputs, labels: batch.labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (C, H, W)
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.inputs.shape();
        [s[1], s[2], s[3]]
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.num_classes];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Index lists of consecutive batches; shuffled when a seed is given.
    pub fn batch_indices(&self, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = Batch> + '_ {
        self.batch_indices(batch_size, None).into_iter().map(move |idx| self.batch(&idx))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let b = self.batch(indices);
        Dataset { inputs: b.inputs, labels: b.labels, num_classes: self.num_classes }
    }
}

/// Gaussian-mixture images: each class owns `components_per_class` random
/// prototype images and samples are prototypes plus isotropic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub input_shape: [usize; 3],
    pub train_size: usize,
    pub test_size: usize,
    /// Noise standard deviation relative to the unit-variance prototypes.
    pub noise: f64,
    #[serde(default = "one")]
    pub components_per_class: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl SyntheticConfig {
    /// (train, test), drawn from the same prototypes with disjoint noise streams.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        if self.num_classes < 2 || self.components_per_class == 0 || self.train_size == 0 || self.test_size == 0 {
            return Err(Error::config(format!("degenerate synthetic dataset config: {self:?}")));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::config(format!("noise must be finite and >= 0 (got {})", self.noise)));
        }
        let dim: usize = self.input_shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let prototypes: Vec<Vec<f64>> = (0..self.num_classes * self.components_per_class)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let train = self.draw(&prototypes, self.train_size, self.seed.wrapping_add(1))?;
        let test = self.draw(&prototypes, self.test_size, self.seed.wrapping_add(2))?;
        Ok((train, test))
    }

    fn draw(&self, prototypes: &[Vec<f64>], n: usize, seed: u64) -> Result<Dataset> {
        let dim = prototypes[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            // balanced classes, round robin
            let label = i % self.num_classes;
            let component = (i / self.num_classes) % self.components_per_class;
            let proto = &prototypes[label * self.components_per_class + component];
            for p in proto {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(p + self.noise * z);
            }
            labels.push(label);
        }
        let [c, h, w] = self.input_shape;
        Dataset::new(Tensor::new(vec![n, c, h, w], data)?, labels, self.num_classes)
    }
}

pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Reduced CIFAR-10 view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarSubset {
    /// Original class ids to keep; relabeled to `0..classes.len()` in the given order.
    #[serde(default)]
    pub classes: Option<Vec<u8>>,
    /// Cap on the number of samples read (after class filtering).
    #[serde(default)]
    pub max_samples: Option<usize>,
    /// Block-average downscale factor; 32 must be divisible by it.
    #[serde(default = "one")]
    pub downscale: usize,
}

impl Default for CifarSubset {
    fn default() -> Self {
        Self { classes: None, max_samples: None, downscale: 1 }
    }
}

/// Reads CIFAR-10 binary batch files (`<label byte><3072 pixel bytes>` records)
/// and normalizes pixels per channel.
pub fn load_cifar10_bin(files: &[impl AsRef<Path>], subset: &CifarSubset) -> Result<Dataset> {
    let factor = subset.downscale;
    if factor == 0 || 32 % factor != 0 {
        return Err(Error::config(format!("downscale must divide 32 (got {factor})")));
    }
    let classes = subset.classes.clone().unwrap_or_else(|| (0..10).collect());
    if classes.len() < 2 || classes.iter().any(|&c| c > 9) {
        return Err(Error::config(format!("invalid CIFAR class subset {classes:?}")));
    }
    let side = 32 / factor;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    'files: for file in files {
        let bytes = fs::read(file.as_ref())?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::input(format!(
                "{}: size {} is not a multiple of the {CIFAR_RECORD}-byte record",
                file.as_ref().display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            if subset.max_samples.is_some_and(|m| labels.len() >= m) {
                break 'files;
            }
            let Some(label) = classes.iter().position(|&c| c == record[0]) else {
                continue;
            };
            let pixels = &record[1..];
            for ch in 0..3 {
                for y in 0..side {
                    for x in 0..side {
                        let mut acc = 0.0;
                        for dy in 0..factor {
                            for dx in 0..factor {
                                acc += pixels[ch * 1024 + (y * factor + dy) * 32 + x * factor + dx] as f64;
                            }
                        }
                        let v = acc / (factor * factor) as f64 / 255.0;
                        data.push((v - CIFAR_MEAN[ch]) / CIFAR_STD[ch]);
                    }
                }
            }
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Err(Error::input("no CIFAR records matched the requested subset"));
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 3, side, side], data)?, labels, classes.len())
}
