//! Append-only JSONL record of stage runs with artifact hashes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use dapper_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// Inputs and config unchanged since the last successful run.
    Cached,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: String,
    pub status: Status,
    pub seed: u64,
    pub config_hash: String,
    /// Artifact path (relative to the output root) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    entries: Vec<LedgerEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hashes of `rel` paths under `root`.
pub fn hash_all(root: &Path, rel: &[String]) -> Result<BTreeMap<String, String>> {
    rel.iter().map(|r| Ok((r.clone(), hash_file(&root.join(r))?))).collect()
}

impl Ledger {
    /// Reads the ledger at `path`, or starts an empty one.
    pub fn open(path: &Path) -> Result<Self> {
        let entries = if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    serde_json::from_str(l)
                        .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Ledger {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn append(&mut self, entry: LedgerEntry) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let line = serde_json::to_string(&entry)? + "\n";
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.entries.push(entry);
        Ok(())
    }

    /// Most recent entry for `stage` that produced or confirmed outputs.
    pub fn last_success(&self, stage: &str) -> Option<&LedgerEntry> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.stage == stage && e.status != Status::Failed)
    }

    /// True when the last success for `stage` had this config and these
    /// inputs, and its outputs are still on disk unmodified.
    pub fn is_fresh(&self, root: &Path, stage: &str, config_hash: &str, inputs: &BTreeMap<String, String>) -> bool {
        let Some(e) = self.last_success(stage) else {
            return false;
        };
        e.config_hash == config_hash
            && &e.inputs == inputs
            && !e.outputs.is_empty()
            && e.outputs
                .iter()
                .all(|(rel, h)| hash_file(&root.join(rel)).is_ok_and(|now| &now == h))
    }
}
