//! Named parameter arrays for one model variant.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::spec::{is_trainable, weight_key, NetworkSpec, BN_PARAMS, CLASSIFIER, KERNEL};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered map from parameter name to array, plus provenance metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    pub spec: NetworkSpec,
    /// Seed the store was initialized (and trained) with.
    pub seed: u64,
    /// Optimizer step count at creation; 0 for a fresh initialization.
    pub step: u64,
    entries: IndexMap<String, Tensor>,
}

impl ParameterStore {
    /// Store with the given entries; checks them against the spec's expected shapes.
    pub fn from_entries(spec: NetworkSpec, seed: u64, step: u64, entries: IndexMap<String, Tensor>) -> Result<Self> {
        spec.validate()?;
        let store = Self { spec, seed, step, entries };
        store.check_shapes()?;
        Ok(store)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let expected = self.spec.parameter_shapes();
        if expected.len() != self.entries.len() {
            return Err(Error::input(format!(
                "store has {} entries, architecture expects {}",
                self.entries.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            match self.entries.get(name) {
                None => return Err(Error::input(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::input(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        t.shape(),
                        shape
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    /// Panicking lookup for names produced by the spec itself.
    pub fn param(&self, name: &str) -> &Tensor {
        self.entries.get(name).unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
    }

    pub fn weight(&self, layer: &str) -> &Tensor {
        self.param(&weight_key(layer))
    }

    pub fn entries(&self) -> &IndexMap<String, Tensor> {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub(crate) fn entries_mut(&mut self) -> &mut IndexMap<String, Tensor> {
        &mut self.entries
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Replaces an existing entry; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::input(format!("unknown parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::input(format!(
                "parameter `{name}`: shape {:?} does not match {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Total element count over trainable parameters.
    pub fn param_count(&self) -> usize {
        self.entries.iter().filter(|(k, _)| is_trainable(k)).map(|(_, t)| t.len()).sum()
    }

    /// Hash of architecture, parameter names and shapes. Equal fingerprints imply
    /// identical key sets and shapes.
    pub fn architecture_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
        }
        short_hex(h)
    }

    /// Hash of the architecture fingerprint plus every value's bit pattern.
    pub fn content_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.architecture_fingerprint().as_bytes());
        for t in self.entries.values() {
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        short_hex(h)
    }

    /// Zero-valued arrays for every trainable parameter.
    pub fn zero_grads(&self) -> Gradients {
        self.entries
            .iter()
            .filter(|(k, _)| is_trainable(k))
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect()
    }
}

pub type Gradients = IndexMap<String, Tensor>;

pub(crate) fn short_hex(h: Sha256) -> String {
    hex::encode(&h.finalize()[..16])
}

/// Deterministic He-normal initialization for conv weights, uniform fan-in
/// initialization for the classifier, identity batch norm.
pub fn build_model(spec: &NetworkSpec, seed: u64) -> Result<ParameterStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = IndexMap::new();
    for (name, shape) in spec.parameter_shapes() {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if let Some(bn_param) = BN_PARAMS.iter().find(|p| name.ends_with(&format!(".{p}"))) {
            match *bn_param {
                "gamma" | "running_var" => vec![1.0; n],
                _ => vec![0.0; n],
            }
        } else if name.starts_with(CLASSIFIER) {
            let fan_in = spec.stage_widths()[2] as f64;
            let bound = 1.0 / fan_in.sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        } else {
            let fan_in = (shape[1] * KERNEL * KERNEL) as f64;
            let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        entries.insert(name, Tensor::new(shape, data)?);
    }
    ParameterStore::from_entries(spec.clone(), seed, 0, entries)
}
