//! Stage table, artifact locations and the ledger-aware stage runner.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dapper_core::par::Exec;
use dapper_core::seed;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::ledger::{hash_all, sha256_hex, Ledger, LedgerEntry, Status};
use crate::stages;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Render,
    TrainGan,
    Project,
    DiscoverDirection,
    Augment,
    Sweep,
    Gradcam,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Render,
        Stage::TrainGan,
        Stage::Project,
        Stage::DiscoverDirection,
        Stage::Augment,
        Stage::Sweep,
        Stage::Gradcam,
        Stage::Report,
    ];

    /// Subcommand name; also the seed-derivation label.
    pub fn name(self) -> &'static str {
        match self {
            Stage::Render => "render",
            Stage::TrainGan => "train-gan",
            Stage::Project => "project",
            Stage::DiscoverDirection => "discover-direction",
            Stage::Augment => "augment",
            Stage::Sweep => "sweep",
            Stage::Gradcam => "gradcam",
            Stage::Report => "report",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Artifacts read by the stage.
    pub fn inputs(self) -> Vec<Artifact> {
        use Artifact::*;
        match self {
            Stage::Render => vec![],
            Stage::TrainGan => vec![SourceManifest],
            Stage::Project => vec![TargetManifest, Generator, WStats],
            Stage::DiscoverDirection => vec![PoseManifest, TargetManifest, Generator, Latents],
            Stage::Augment | Stage::Sweep | Stage::Gradcam => {
                vec![TargetManifest, Generator, WStats, Latents, Direction]
            }
            Stage::Report => vec![
                Generator,
                Latents,
                ProjectionSummary,
                Direction,
                DirectionMetrics,
                SweepSummary,
                GradcamSummary,
                GradcamOverlays,
                GradcamMetrics,
            ],
        }
    }

    /// Artifacts written (and hashed) by the stage.
    pub fn outputs(self) -> Vec<Artifact> {
        Artifact::ALL.into_iter().filter(|a| a.producer() == self).collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tracked files, relative to the output root. Image folders are covered by
/// their manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Artifact {
    SourceManifest,
    TargetManifest,
    PoseManifest,
    Generator,
    WStats,
    GanLog,
    GanSamples,
    Latents,
    ProjectionSummary,
    Oracle,
    Direction,
    Reference,
    DirectionMetrics,
    DirectionStrip,
    AugmentedManifest,
    SweepCsv,
    SweepSummary,
    GradcamMetrics,
    GradcamSummary,
    GradcamOverlays,
    ReportSummary,
    ReportStrip,
    ReportCurves,
    ReportCells,
}

impl Artifact {
    pub const ALL: [Artifact; 24] = [
        Artifact::SourceManifest,
        Artifact::TargetManifest,
        Artifact::PoseManifest,
        Artifact::Generator,
        Artifact::WStats,
        Artifact::GanLog,
        Artifact::GanSamples,
        Artifact::Latents,
        Artifact::ProjectionSummary,
        Artifact::Oracle,
        Artifact::Direction,
        Artifact::Reference,
        Artifact::DirectionMetrics,
        Artifact::DirectionStrip,
        Artifact::AugmentedManifest,
        Artifact::SweepCsv,
        Artifact::SweepSummary,
        Artifact::GradcamMetrics,
        Artifact::GradcamSummary,
        Artifact::GradcamOverlays,
        Artifact::ReportSummary,
        Artifact::ReportStrip,
        Artifact::ReportCurves,
        Artifact::ReportCells,
    ];

    pub fn rel(self) -> &'static str {
        match self {
            Artifact::SourceManifest => "data/source/manifest.jsonl",
            Artifact::TargetManifest => "data/target/manifest.jsonl",
            Artifact::PoseManifest => "data/pose/manifest.jsonl",
            Artifact::Generator => "gan/generator.ckpt",
            Artifact::WStats => "gan/w_stats.json",
            Artifact::GanLog => "gan/train_log.json",
            Artifact::GanSamples => "gan/samples.png",
            Artifact::Latents => "latents/target.jsonl",
            Artifact::ProjectionSummary => "latents/summary.json",
            Artifact::Oracle => "direction/oracle.ckpt",
            Artifact::Direction => "direction/direction.json",
            Artifact::Reference => "direction/reference.ckpt",
            Artifact::DirectionMetrics => "direction/metrics.json",
            Artifact::DirectionStrip => "direction/strip.png",
            Artifact::AugmentedManifest => "augment/manifest.jsonl",
            Artifact::SweepCsv => "sweep/sweep.csv",
            Artifact::SweepSummary => "sweep/summary.json",
            Artifact::GradcamMetrics => "gradcam/metrics.csv",
            Artifact::GradcamSummary => "gradcam/summary.json",
            Artifact::GradcamOverlays => "gradcam/overlays.png",
            Artifact::ReportSummary => "report/summary.json",
            Artifact::ReportStrip => "report/coefficient_strip.png",
            Artifact::ReportCurves => "report/accuracy_vs_fraction.svg",
            Artifact::ReportCells => "report/sweep_cells.csv",
        }
    }

    pub fn producer(self) -> Stage {
        use Artifact::*;
        match self {
            SourceManifest | TargetManifest | PoseManifest => Stage::Render,
            Generator | WStats | GanLog | GanSamples => Stage::TrainGan,
            Latents | ProjectionSummary => Stage::Project,
            Oracle | Direction | Reference | DirectionMetrics | DirectionStrip => Stage::DiscoverDirection,
            AugmentedManifest => Stage::Augment,
            SweepCsv | SweepSummary => Stage::Sweep,
            GradcamMetrics | GradcamSummary | GradcamOverlays => Stage::Gradcam,
            ReportSummary | ReportStrip | ReportCurves | ReportCells => Stage::Report,
        }
    }
}

#[derive(Debug)]
pub enum StageError {
    /// An input artifact is absent; `stage` produces it.
    Missing { artifact: &'static str, stage: Stage },
    Failed(dapper_core::Error),
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageError::Missing { artifact, stage } => {
                write!(f, "missing artifact `{artifact}`; run `dapper {stage}` first")
            }
            StageError::Failed(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for StageError {}

impl From<dapper_core::Error> for StageError {
    fn from(e: dapper_core::Error) -> Self {
        StageError::Failed(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    /// Skipped: the ledger shows identical config and inputs.
    Cached,
}

/// One experiment rooted at an output directory.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub exec: Exec,
    pub force: bool,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Self {
        Pipeline {
            cfg,
            out: out.into(),
            exec: Exec::default(),
            force: false,
        }
    }

    pub fn path(&self, a: Artifact) -> PathBuf {
        self.out.join(a.rel())
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.out.join("ledger.jsonl")
    }

    /// `seed::derive(master, stage name)`.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        seed::derive(self.cfg.seed, stage.name())
    }

    /// The config slice a stage depends on, with derived seeds filled in.
    pub fn stage_config(&self, stage: Stage) -> Value {
        let c = &self.cfg;
        let body = match stage {
            Stage::Render => json!({ "scenegen": c.scenegen }),
            Stage::TrainGan => json!({ "gan": stages::gan_config(self) }),
            Stage::Project => json!({ "projection": stages::projection_config(self) }),
            Stage::DiscoverDirection => json!({
                "direction": c.direction,
                "classifier": c.classifier,
            }),
            Stage::Augment => json!({ "augmentation": c.augmentation }),
            Stage::Sweep => json!({
                "sweep": c.sweep,
                "classifier": c.classifier,
                "policy": c.augmentation.policy,
            }),
            Stage::Gradcam => json!({
                "gradcam": c.gradcam,
                "folds": c.sweep.folds,
                "classifier": c.classifier,
                "policy": c.augmentation.policy,
            }),
            Stage::Report => json!({
                "report": c.report,
                "direction": {
                    "eval_latents": c.direction.eval_latents,
                    "sweep_degrees": c.direction.sweep_degrees,
                },
                "sweep": c.sweep,
            }),
        };
        json!({ "stage": stage.name(), "seed": self.stage_seed(stage), "config": body })
    }

    pub fn config_hash(&self, stage: Stage) -> String {
        sha256_hex(self.stage_config(stage).to_string().as_bytes())
    }

    fn check_inputs(&self, stage: Stage) -> Result<(), StageError> {
        for a in stage.inputs() {
            if !self.path(a).exists() {
                return Err(StageError::Missing {
                    artifact: a.rel(),
                    stage: a.producer(),
                });
            }
        }
        Ok(())
    }

    /// Runs `stage` unless the ledger shows it is up to date (or `force`).
    pub fn run(&self, stage: Stage) -> Result<Outcome, StageError> {
        self.check_inputs(stage)?;
        let rel = |v: Vec<Artifact>| v.into_iter().map(|a| a.rel().to_string()).collect::<Vec<_>>();
        let inputs = hash_all(&self.out, &rel(stage.inputs()))?;
        let config_hash = self.config_hash(stage);
        let mut ledger = Ledger::open(&self.ledger_path())?;
        let seed_ = self.stage_seed(stage);
        let entry = |status, outputs, wall_seconds, error| LedgerEntry {
            stage: stage.name().to_string(),
            status,
            seed: seed_,
            config_hash: config_hash.clone(),
            inputs: inputs.clone(),
            outputs,
            wall_seconds,
            error,
        };
        if !self.force && ledger.is_fresh(&self.out, stage.name(), &config_hash, &inputs) {
            log::info!("{stage}: up to date");
            let outputs = ledger.last_success(stage.name()).map(|e| e.outputs.clone()).unwrap_or_default();
            ledger.append(entry(Status::Cached, outputs, 0.0, None))?;
            return Ok(Outcome::Cached);
        }
        log::info!("{stage}: running");
        let t = Instant::now();
        let result = stages::execute(self, stage);
        let wall = t.elapsed().as_secs_f64();
        match result {
            Ok(()) => {
                let outputs = hash_all(&self.out, &rel(stage.outputs()))?;
                ledger.append(entry(Status::Ok, outputs, wall, None))?;
                log::info!("{stage}: done in {wall:.1}s");
                Ok(Outcome::Ran)
            }
            Err(e) => {
                ledger.append(entry(Status::Failed, BTreeMap::new(), wall, Some(e.to_string())))?;
                Err(StageError::Failed(e))
            }
        }
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<Outcome>, StageError> {
        Stage::ALL.into_iter().map(|s| self.run(s)).collect()
    }
}

/// Creates the parent directory of `path`.
pub(crate) fn ensure_parent(path: &Path) -> dapper_core::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| dapper_core::Error::io(dir, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_input_is_produced_by_an_earlier_stage() {
        for s in Stage::ALL {
            for a in s.inputs() {
                assert!(a.producer() < s, "{s} reads {} from {}", a.rel(), a.producer());
            }
            assert!(!s.outputs().is_empty(), "{s} has no tracked outputs");
            assert_eq!(Stage::from_name(s.name()), Some(s));
        }
    }

    #[test]
    fn stage_seeds_differ_and_follow_the_master() {
        let p = Pipeline::new(ExperimentConfig::default(), "x");
        let seeds: std::collections::HashSet<u64> = Stage::ALL.iter().map(|&s| p.stage_seed(s)).collect();
        assert_eq!(seeds.len(), Stage::ALL.len());
        assert_eq!(p.stage_seed(Stage::Render), seed::derive(0, "render"));
        let mut q = p.clone();
        q.cfg.seed = 9;
        assert_ne!(p.config_hash(Stage::Render), q.config_hash(Stage::Render));
        assert_eq!(p.config_hash(Stage::Sweep), p.clone().config_hash(Stage::Sweep));
    }

    #[test]
    fn missing_inputs_name_the_producing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(ExperimentConfig::default(), dir.path());
        match p.run(Stage::Sweep) {
            Err(StageError::Missing { stage, .. }) => assert_eq!(stage, Stage::Render),
            other => panic!("{other:?}"),
        }
        let e = p.run(Stage::Report).unwrap_err().to_string();
        assert!(e.contains("dapper train-gan"), "{e}");
    }
}
