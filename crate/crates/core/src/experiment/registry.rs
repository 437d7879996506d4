//! Flat directory of run manifests, one JSON file per run.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::Result;

pub const REGISTRY_DIR: &str = "registry";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub name: String,
    pub seed: u64,
    pub dir: PathBuf,
    /// Full resolved configuration.
    pub config: serde_json::Value,
    pub fingerprints: IndexMap<String, String>,
}

pub struct Registry {
    dir: PathBuf,
}

impl Registry {
    pub fn open(out_dir: &Path) -> Self {
        Self { dir: out_dir.join(REGISTRY_DIR) }
    }

    /// Writes (or replaces) the record; the rename makes each write atomic.
    pub fn record(&self, rec: &RunRecord) -> Result<PathBuf> {
        let path = self.dir.join(format!("{}.json", rec.run_id));
        write_atomic(&path, &serde_json::to_vec_pretty(rec)?)?;
        Ok(path)
    }

    /// All records, sorted by run id.
    pub fn list(&self) -> Result<Vec<RunRecord>> {
        let Ok(entries) = fs::read_dir(&self.dir) else { return Ok(Vec::new()) };
        let mut out = Vec::new();
        for e in entries {
            let path = e?.path();
            if path.extension().is_some_and(|x| x == "json") {
                out.push(serde_json::from_slice(&fs::read(&path)?)?);
            }
        }
        out.sort_by(|a: &RunRecord, b| a.run_id.cmp(&b.run_id));
        Ok(out)
    }
}
