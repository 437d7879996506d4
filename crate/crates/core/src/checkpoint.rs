//! On-disk formats for parameter stores, quantized models and prune masks.
//!
//! A checkpoint is `HCECKPT\0`, a little-endian `u32` format version, a `u64`
//! manifest length, the JSON manifest, then every tensor's values as
//! little-endian `f64` in manifest order. Round trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, ParameterStore};
use crate::prune::PruneMask;
use crate::quant::{ActivationRange, QuantConfig, QuantizedModel};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HCECKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub step: u64,
    pub architecture_fingerprint: String,
    pub content_fingerprint: String,
    pub entries: Vec<(String, Vec<usize>)>,
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_store(store: &ParameterStore) -> Result<Vec<u8>> {
    let manifest = CheckpointManifest {
        spec: store.spec.clone(),
        seed: store.seed,
        step: store.step,
        architecture_fingerprint: store.architecture_fingerprint(),
        content_fingerprint: store.content_fingerprint(),
        entries: store.iter().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let values: usize = store.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_store(bytes: &[u8], origin: &Path) -> Result<ParameterStore> {
    let bad = |reason: String| Error::Checkpoint { path: origin.to_path_buf(), reason };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not an HCE checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}; this build reads version {FORMAT_VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + len).ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(body).map_err(|e| bad(format!("manifest: {e}")))?;
    let mut data = &bytes[20 + len..];
    let mut entries = IndexMap::new();
    for (name, shape) in &manifest.entries {
        let n: usize = shape.iter().product();
        if data.len() < 8 * n {
            return Err(bad(format!("truncated data for '{name}'")));
        }
        let values = data[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        data = &data[8 * n..];
        entries.insert(name.clone(), Tensor::new(shape.clone(), values)?);
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    let store = ParameterStore::from_entries(manifest.spec, manifest.seed, manifest.step, entries)
        .map_err(|e| bad(e.to_string()))?;
    if store.content_fingerprint() != manifest.content_fingerprint {
        return Err(bad("content fingerprint mismatch".into()));
    }
    Ok(store)
}

pub fn save_store(store: &ParameterStore, path: &Path) -> Result<()> {
    write_atomic(path, &encode_store(store)?)
}

pub fn load_store(path: &Path) -> Result<ParameterStore> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
    decode_store(&bytes, path)
}

/// Everything about a quantized model except its grid weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantManifest {
    pub weights_fingerprint: String,
    pub scales: IndexMap<String, f64>,
    pub zero_points: IndexMap<String, i64>,
    pub activation_ranges: IndexMap<String, ActivationRange>,
    pub config: QuantConfig,
    pub warnings: Vec<String>,
}

/// Writes `<dir>/q.ckpt` and `<dir>/q.quant.json`.
pub fn save_quantized(q: &QuantizedModel, dir: &Path) -> Result<()> {
    save_store(&q.grid_weights, &dir.join("q.ckpt"))?;
    let manifest = QuantManifest {
        weights_fingerprint: q.grid_weights.content_fingerprint(),
        scales: q.scales.clone(),
        zero_points: q.zero_points.clone(),
        activation_ranges: q.activation_ranges.clone(),
        config: q.config.clone(),
        warnings: q.warnings.clone(),
    };
    write_atomic(&dir.join("q.quant.json"), &serde_json::to_vec_pretty(&manifest)?)
}

pub fn load_quantized(dir: &Path) -> Result<QuantizedModel> {
    let grid_weights = load_store(&dir.join("q.ckpt"))?;
    let path = dir.join("q.quant.json");
    let bad = |reason: String| Error::Checkpoint { path: path.clone(), reason };
    let text = fs::read(&path).map_err(|e| bad(e.to_string()))?;
    let m: QuantManifest = serde_json::from_slice(&text).map_err(|e| bad(e.to_string()))?;
    if m.weights_fingerprint != grid_weights.content_fingerprint() {
        return Err(bad("quantization manifest belongs to different weights".into()));
    }
    Ok(QuantizedModel {
        grid_weights,
        scales: m.scales,
        zero_points: m.zero_points,
        activation_ranges: m.activation_ranges,
        config: m.config,
        warnings: m.warnings,
    })
}

pub fn save_mask(mask: &PruneMask, path: &Path) -> Result<()> {
    write_atomic(path, &serde_json::to_vec(mask)?)
}

pub fn load_mask(path: &Path) -> Result<PruneMask> {
    let text = fs::read(path).map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
    serde_json::from_slice(&text).map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_model;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::plain(8, 4, [3, 6, 6]).with_width(0.5);
        let mut store = build_model(&spec, 3).unwrap();
        store.get_mut("fc.bias").unwrap().data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        let path = dir.path().join("o.ckpt");
        save_store(&store, &path).unwrap();
        let back = load_store(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.content_fingerprint(), store.content_fingerprint());
    }

    #[test]
    fn corrupt_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"nope").unwrap();
        assert!(matches!(load_store(&path), Err(Error::Checkpoint { .. })));
        let spec = NetworkSpec::plain(8, 4, [3, 6, 6]);
        let mut bytes = encode_store(&build_model(&spec, 0).unwrap()).unwrap();
        bytes[8] = 9;
        let err = decode_store(&bytes, &path).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }
}
