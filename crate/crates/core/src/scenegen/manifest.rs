use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::SceneParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Real,
    SyntheticPerturb,
    SyntheticTraverse,
    Affine,
}

impl Provenance {
    pub fn is_synthetic(self) -> bool {
        self != Provenance::Real
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub path: String,
    pub label: Option<String>,
    pub pose_deg: Option<f64>,
    pub provenance: Provenance,
    pub seed: u64,
    /// Id of the real record a synthetic record was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Scene parameters for rendered records; lets masks be regenerated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneParams>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMeta {
    pub kind: String,
    pub labels: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub meta: ManifestMeta,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let labels: HashSet<&str> = self.meta.labels.iter().map(String::as_str).collect();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::param("id", format!("duplicate sample id `{}`", r.id)));
            }
            if let Some(l) = &r.label {
                if !labels.contains(l.as_str()) {
                    return Err(Error::UnknownLabel(l.clone()));
                }
            }
        }
        Ok(())
    }

    /// Index of a record's label within the label set.
    pub fn class_index(&self, record: &Record) -> Result<usize> {
        let label = record
            .label
            .as_ref()
            .ok_or_else(|| Error::param("label", format!("record `{}` is unlabeled", record.id)))?;
        self.meta
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.clone()))
    }

    pub fn class_indices(&self) -> Result<Vec<usize>> {
        self.records.iter().map(|r| self.class_index(r)).collect()
    }

    /// Records as JSON lines.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(meta: ManifestMeta, text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<Record>, _>>()?;
        let m = Self { meta, records };
        m.validate()?;
        Ok(m)
    }

    /// Writes `path` (records) and its `.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let mp = meta_path(path);
        std::fs::write(&mp, serde_json::to_vec_pretty(&self.meta)?).map_err(|e| Error::io(&mp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mp = meta_path(path);
        let meta: ManifestMeta = serde_json::from_slice(&std::fs::read(&mp).map_err(|e| Error::io(&mp, e))?)?;
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let m = Self { meta, records };
        m.validate()?;
        Ok(m)
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}
