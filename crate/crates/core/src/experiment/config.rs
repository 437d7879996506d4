//! TOML experiment configuration.
//!
//! Unknown keys are rejected. Two environment variables override paths (and
//! nothing else): `HCE_OUT_DIR` replaces `out_dir`, `HCE_DATASET_PATH` replaces
//! `dataset.path`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleMode;
use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, TrainConfig};
use crate::objective::HceLossConfig;
use crate::pipeline::{DatasetConfig, HceRunConfig};
use crate::prune::SparsitySchedule;
use crate::quant::QuantConfig;
use crate::region::{DEFAULT_CELL_SIZE, DEFAULT_EXTENT, DEFAULT_RESOLUTION};

pub const OUT_DIR_ENV: &str = "HCE_OUT_DIR";
pub const DATASET_PATH_ENV: &str = "HCE_DATASET_PATH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub network: NetworkSpec,
    pub dataset: DatasetConfig,
    pub quant: QuantConfig,
    pub prune: SparsitySchedule,
    pub loss: HceLossConfig,
    pub baseline: TrainConfig,
    pub finetune: TrainConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub region: RegionConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default)]
    pub mode: EnsembleMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub keep_ratios: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { alphas: vec![0.1, 0.3, 0.5, 0.7, 0.9], keep_ratios: vec![0.5, 0.25] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    /// Test sample at the center of the plane.
    #[serde(default)]
    pub sample_index: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_extent")]
    pub extent: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_cell_size")]
    pub cell_size: u32,
}

fn default_extent() -> f64 {
    DEFAULT_EXTENT
}
fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}
fn default_cell_size() -> u32 {
    DEFAULT_CELL_SIZE
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            sample_index: 0,
            seed: 0,
            extent: DEFAULT_EXTENT,
            resolution: DEFAULT_RESOLUTION,
            cell_size: DEFAULT_CELL_SIZE,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, applies path overrides from the environment, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        cfg.apply_env_overrides(|k| std::env::var_os(k).map(PathBuf::from));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env_overrides(&mut self, var: impl Fn(&str) -> Option<PathBuf>) {
        if let Some(p) = var(OUT_DIR_ENV) {
            self.out_dir = p;
        }
        if let (Some(p), DatasetConfig::Cifar10 { path, .. }) = (var(DATASET_PATH_ENV), &mut self.dataset) {
            *path = Some(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config(format!("name must be a non-empty file name (got {:?})", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must list at least one seed"));
        }
        for a in &self.sweep.alphas {
            HceLossConfig { alpha: *a, ..self.loss }.validate().map_err(|e| Error::config(format!("sweep.alphas: {e}")))?;
        }
        for k in &self.sweep.keep_ratios {
            SparsitySchedule { target_keep_ratio: *k, ..self.prune.clone() }
                .validate()
                .map_err(|e| Error::config(format!("sweep.keep_ratios: {e}")))?;
        }
        if self.region.resolution < 3 || self.region.resolution.is_multiple_of(2) {
            return Err(Error::config(format!("region.resolution must be odd and >= 3 (got {})", self.region.resolution)));
        }
        if !(self.region.extent.is_finite() && self.region.extent >= 0.0) {
            return Err(Error::config("region.extent must be finite and >= 0"));
        }
        self.run_config(self.seeds[0]).validate()
    }

    /// Directory of one seed's run.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(&self.name).join(format!("seed_{seed}"))
    }

    pub fn run_config(&self, seed: u64) -> HceRunConfig {
        HceRunConfig {
            network: self.network.clone(),
            dataset: self.dataset.clone(),
            quant: self.quant.clone(),
            prune: self.prune.clone(),
            loss: self.loss,
            baseline: self.baseline.clone(),
            finetune: self.finetune.clone(),
            ensemble_mode: self.ensemble.mode,
            seed,
            out_dir: self.run_dir(seed),
        }
    }
}

/// Desk-scale configuration: synthetic 10-class images, depth-8 plain convnet,
/// 3-bit Q, keep ratio 0.5, α = 0.3.
pub const TOY_CONFIG: &str = r#"
name = "toy"
seeds = [0, 1, 2, 3, 4]
out_dir = "runs"

[network]
family = "plain"
depth = 8
num_classes = 10
input_shape = [3, 8, 8]
width_multiplier = 0.5

[dataset]
kind = "synthetic"
num_classes = 10
input_shape = [3, 8, 8]
train_size = 2000
test_size = 1000
noise = 1.5
components_per_class = 2
seed = 7

[quant]
weight_bits = 3
activation_bits = 3

[prune]
target_keep_ratio = 0.5
steps = 2

[loss]
alpha = 0.3
temperature = 4.0

[baseline]
epochs = 6
lr_milestones = [4]

[finetune]
epochs = 2
learning_rate = 0.01

[sweep]
alphas = [0.1, 0.3, 0.5, 0.7, 0.9]
keep_ratios = [0.5, 0.25]

[region]
sample_index = 0
seed = 0
extent = 2.0
resolution = 51
"#;
