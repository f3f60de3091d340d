//! Experiment configuration: one versioned JSON document.
//!
//! Every module seed is derived from the master seed as
//! `seed::derive(master, stage)` (and sub-labels below that). Seed fields
//! inside the embedded module configs are accepted but overwritten.

use std::fmt;
use std::path::{Path, PathBuf};

use dapper_core::augmenter::{AugmentKind, AugmentPolicy, MixSpec};
use dapper_core::evalhost::{ClassifierConfig, DEFAULT_FOLDS, DEFAULT_FRACTIONS};
use dapper_core::inversion::ProjectionConfig;
use dapper_core::semdir::{DiscoveryConfig, OracleConfig};
use dapper_core::stylegan::{GanConfig, MIN_SOURCE_IMAGES};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// A config problem, located by its dotted field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenegenConfig {
    pub n_per_class: usize,
    pub source_images: usize,
    pub pose_renders: usize,
}

impl Default for ScenegenConfig {
    fn default() -> Self {
        ScenegenConfig {
            n_per_class: 100,
            source_images: 2500,
            pose_renders: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionSection {
    pub discovery: DiscoveryConfig,
    pub oracle: OracleConfig,
    /// Projected target latents used for the monotonicity and identity checks.
    pub eval_latents: usize,
    /// Sweep in degrees for the monotonicity check.
    pub sweep_degrees: Vec<f64>,
    /// Traversal (in calibrated units) for the identity check.
    pub identity_units: f64,
}

impl Default for DirectionSection {
    fn default() -> Self {
        DirectionSection {
            discovery: DiscoveryConfig::default(),
            oracle: OracleConfig::default(),
            eval_latents: 100,
            sweep_degrees: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
            identity_units: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub fractions: Vec<f64>,
    pub policies: Vec<AugmentKind>,
    pub folds: usize,
    /// Number of sweep seeds derived from the master seed.
    pub repeats: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            policies: vec![AugmentKind::None, AugmentKind::Perturb, AugmentKind::Traverse, AugmentKind::Affine],
            folds: DEFAULT_FOLDS,
            repeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcamSection {
    pub real_fraction: f64,
    pub policy: AugmentKind,
    pub fold: usize,
    /// Test images shown in the overlay grid.
    pub overlays: usize,
}

impl Default for GradcamSection {
    fn default() -> Self {
        GradcamSection {
            real_fraction: 0.7,
            policy: AugmentKind::Perturb,
            fold: 0,
            overlays: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Strip coefficients in degrees.
    pub strip_coefficients: Vec<f64>,
    pub strip_latents: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            strip_coefficients: vec![-30.0, -20.0, 0.0, 20.0, 30.0],
            strip_latents: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Output root; relative paths resolve against the config file.
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { out: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub scenegen: ScenegenConfig,
    pub gan: GanConfig,
    pub projection: ProjectionConfig,
    pub direction: DirectionSection,
    /// Mix materialised by the `augment` stage; its policy also supplies the
    /// per-kind parameters of the sweep and Grad-CAM stages.
    pub augmentation: MixSpec,
    pub classifier: ClassifierConfig,
    pub sweep: SweepSection,
    pub gradcam: GradcamSection,
    pub report: ReportSection,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            scenegen: ScenegenConfig::default(),
            gan: GanConfig::default(),
            projection: ProjectionConfig::default(),
            direction: DirectionSection::default(),
            augmentation: MixSpec {
                policy: AugmentPolicy::default(),
                ..MixSpec::default()
            },
            classifier: ClassifierConfig::default(),
            sweep: SweepSection::default(),
            gradcam: GradcamSection::default(),
            report: ReportSection::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Removes `key` from `obj` and deserializes it, falling back to `default`.
fn take_or<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str, path: &str, default: T) -> Result<T, ConfigError> {
    match obj.remove(key) {
        None => Ok(default),
        Some(v) => serde_json::from_value(v).map_err(|e| ConfigError::new(join(path, key), e)),
    }
}

fn take<T: DeserializeOwned + Default>(obj: &mut Map<String, Value>, key: &str, path: &str) -> Result<T, ConfigError> {
    take_or(obj, key, path, T::default())
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn object(v: Value, path: &str) -> Result<Map<String, Value>, ConfigError> {
    match v {
        Value::Object(m) => Ok(m),
        other => Err(ConfigError::new(path, format!("expected an object, found {other}"))),
    }
}

fn no_leftovers(obj: Map<String, Value>, path: &str) -> Result<(), ConfigError> {
    match obj.keys().next() {
        Some(k) => Err(ConfigError::new(join(path, k), "unknown key")),
        None => Ok(()),
    }
}

fn direction_from(v: Value) -> Result<DirectionSection, ConfigError> {
    let path = "direction";
    let mut m = object(v, path)?;
    let d = DirectionSection::default();
    let out = DirectionSection {
        discovery: take(&mut m, "discovery", path)?,
        oracle: take(&mut m, "oracle", path)?,
        eval_latents: take_or(&mut m, "eval_latents", path, d.eval_latents)?,
        sweep_degrees: take_or(&mut m, "sweep_degrees", path, d.sweep_degrees)?,
        identity_units: take_or(&mut m, "identity_units", path, d.identity_units)?,
    };
    no_leftovers(m, path)?;
    Ok(out)
}

fn augmentation_from(v: Value) -> Result<MixSpec, ConfigError> {
    let path = "augmentation";
    let mut m = object(v, path)?;
    let d = ExperimentConfig::default().augmentation;
    let out = MixSpec {
        real_fraction: take_or(&mut m, "real_fraction", path, d.real_fraction)?,
        policy: take_or(&mut m, "policy", path, d.policy)?,
        stratified: take_or(&mut m, "stratified", path, d.stratified)?,
    };
    no_leftovers(m, path)?;
    Ok(out)
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ConfigError::new("", format!("invalid JSON: {e}")))?;
        let mut m = object(v, "")?;
        let version = m
            .remove("schema_version")
            .ok_or_else(|| ConfigError::new("schema_version", "missing"))?;
        let schema_version = version
            .as_u64()
            .filter(|&v| v == SCHEMA_VERSION as u64)
            .ok_or_else(|| ConfigError::new("schema_version", format!("unsupported version {version}, expected {SCHEMA_VERSION}")))?
            as u32;
        let seed = match m.remove("seed") {
            None => 0,
            Some(v) => v.as_u64().ok_or_else(|| ConfigError::new("seed", "expected a non-negative integer"))?,
        };
        let direction = match m.remove("direction") {
            None => DirectionSection::default(),
            Some(v) => direction_from(v)?,
        };
        let augmentation = match m.remove("augmentation") {
            None => ExperimentConfig::default().augmentation,
            Some(v) => augmentation_from(v)?,
        };
        let cfg = ExperimentConfig {
            schema_version,
            seed,
            scenegen: take(&mut m, "scenegen", "")?,
            gan: take(&mut m, "gan", "")?,
            projection: take(&mut m, "projection", "")?,
            direction,
            augmentation,
            classifier: take(&mut m, "classifier", "")?,
            sweep: take(&mut m, "sweep", "")?,
            gradcam: take(&mut m, "gradcam", "")?,
            report: take(&mut m, "report", "")?,
            paths: take(&mut m, "paths", "")?,
        };
        no_leftovers(m, "")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn core(section: &str, r: dapper_core::Result<()>) -> Result<(), ConfigError> {
            r.map_err(|e| match e {
                dapper_core::Error::Param { field, reason } => ConfigError::new(join(section, &field), reason),
                other => ConfigError::new(section, other),
            })
        }
        let s = &self.scenegen;
        if s.n_per_class < 10 {
            return Err(ConfigError::new("scenegen.n_per_class", "must be at least 10"));
        }
        if s.source_images < MIN_SOURCE_IMAGES {
            return Err(ConfigError::new(
                "scenegen.source_images",
                format!("must be at least {MIN_SOURCE_IMAGES}"),
            ));
        }
        if s.pose_renders < 10 {
            return Err(ConfigError::new("scenegen.pose_renders", "must be at least 10"));
        }
        core("gan", self.gan.validate())?;
        core("projection", self.projection.validate())?;
        core("augmentation", self.augmentation.validate())?;
        core("classifier", self.classifier.validate())?;
        let d = &self.direction;
        if d.discovery.corpus_size < dapper_core::semdir::MIN_CORPUS {
            return Err(ConfigError::new(
                "direction.discovery.corpus_size",
                format!("must be at least {}", dapper_core::semdir::MIN_CORPUS),
            ));
        }
        if !(d.discovery.tau >= 0.0 && d.discovery.tau < 1.0) {
            return Err(ConfigError::new("direction.discovery.tau", "must lie in [0, 1)"));
        }
        if d.eval_latents == 0 {
            return Err(ConfigError::new("direction.eval_latents", "must be at least 1"));
        }
        if d.sweep_degrees.len() < 2 || d.sweep_degrees.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(ConfigError::new("direction.sweep_degrees", "need at least two increasing values"));
        }
        if !(d.identity_units.is_finite() && d.identity_units > 0.0) {
            return Err(ConfigError::new("direction.identity_units", "must be positive"));
        }
        let sw = &self.sweep;
        if sw.fractions.is_empty() || sw.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(ConfigError::new("sweep.fractions", "need values in (0, 1]"));
        }
        if sw.policies.is_empty() {
            return Err(ConfigError::new("sweep.policies", "need at least one policy"));
        }
        if sw.folds < 2 {
            return Err(ConfigError::new("sweep.folds", "need at least two folds"));
        }
        if sw.repeats == 0 {
            return Err(ConfigError::new("sweep.repeats", "must be at least 1"));
        }
        let g = &self.gradcam;
        if !(g.real_fraction > 0.0 && g.real_fraction <= 1.0) {
            return Err(ConfigError::new("gradcam.real_fraction", "must lie in (0, 1]"));
        }
        if g.fold >= sw.folds {
            return Err(ConfigError::new("gradcam.fold", format!("must be below sweep.folds ({})", sw.folds)));
        }
        let r = &self.report;
        if r.strip_coefficients.is_empty() || r.strip_coefficients.iter().any(|c| !c.is_finite()) {
            return Err(ConfigError::new("report.strip_coefficients", "need finite values"));
        }
        if r.strip_latents == 0 {
            return Err(ConfigError::new("report.strip_latents", "must be at least 1"));
        }
        Ok(())
    }

    /// Policy for `kind`, with the shared augmentation parameters.
    pub fn policy(&self, kind: AugmentKind) -> AugmentPolicy {
        AugmentPolicy {
            kind,
            ..self.augmentation.policy.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        format!("{{\"schema_version\": {SCHEMA_VERSION}}}")
    }

    #[test]
    fn minimal_document_takes_defaults() {
        let c = ExperimentConfig::from_json(&minimal()).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.report.strip_coefficients, vec![-30.0, -20.0, 0.0, 20.0, 30.0]);
    }

    #[test]
    fn default_round_trips_through_json() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field_path() {
        let cases = [
            (r#"{"schema_version": 1, "gan": {"stepz": 3}}"#, "gan"),
            (r#"{"schema_version": 1, "gan": {"steps": 0}}"#, "gan.steps"),
            (r#"{"schema_version": 1, "colour": 3}"#, "colour"),
            (r#"{"schema_version": 1, "direction": {"oracle": {"epocs": 1}}}"#, "direction.oracle"),
            (r#"{"schema_version": 1, "direction": {"spare": 1}}"#, "direction.spare"),
            (r#"{"schema_version": 1, "augmentation": {"real_fraction": 0}}"#, "augmentation.real_fraction"),
            (r#"{"schema_version": 1, "augmentation": {"policy": {"sigma": -1}}}"#, "augmentation.sigma"),
            (r#"{"schema_version": 1, "sweep": {"folds": 1}}"#, "sweep.folds"),
            (r#"{"schema_version": 1, "scenegen": {"n_per_class": 5}}"#, "scenegen.n_per_class"),
            (r#"{"schema_version": 2}"#, "schema_version"),
            (r#"{"seed": 1}"#, "schema_version"),
        ];
        for (doc, path) in cases {
            let e = ExperimentConfig::from_json(doc).unwrap_err();
            assert_eq!(e.path, path, "{doc}: {e}");
        }
        let e = ExperimentConfig::from_json(r#"{"schema_version": 1, "gan": {"stepz": 3}}"#).unwrap_err();
        assert!(e.message.contains("stepz"), "{e}");
    }
}
