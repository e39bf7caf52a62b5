//! Content-hashed stage records.
//!
//! A stage's input hash covers its name, its parameters and the hashes of
//! its input files. A stage is skipped when the previous manifest holds the
//! same input hash and every recorded output still hashes to its recorded
//! value. Wall-clock times live in a separate file so manifests are
//! byte-identical between equal runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::write_text;
use crate::error::{Error, Result};
use crate::hash::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Output files: path relative to the run directory. Inputs: file name.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub input_hash: String,
    pub params: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn input_hash(stage: &str, params: &serde_json::Value, inputs: &[FileHash]) -> Result<String> {
    let doc = serde_json::json!({ "stage": stage, "params": params, "inputs": inputs });
    Ok(sha256_hex(serde_json::to_string(&doc)?.as_bytes()))
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Previous manifest if present and readable; a corrupt one is ignored
    /// and every stage reruns.
    pub fn read_or_default(path: impl AsRef<Path>) -> Self {
        Self::read(path).unwrap_or_default()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn get(&self, stage: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn upsert(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.stage == record.stage) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }
}

impl StageRecord {
    /// True when every output under `root` still has its recorded hash.
    pub fn outputs_intact(&self, root: &Path) -> bool {
        self.outputs
            .iter()
            .all(|o| hash_file(&root.join(&o.file)).is_ok_and(|h| h == o.sha256))
    }
}
