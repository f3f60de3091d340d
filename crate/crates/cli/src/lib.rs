//! `dapper` command line: configuration, run ledger and pipeline stages.

pub mod calibration;
pub mod config;
pub mod ledger;
pub mod pipeline;
pub mod report;
pub mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{ConfigError, ExperimentConfig};
pub use pipeline::{Artifact, Outcome, Pipeline, Stage, StageError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dapper", version, about = "Latent-space augmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root, overriding `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Re-run the stage even if the ledger shows it is up to date.
    #[arg(long, global = true)]
    stage_force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the source, target and pose datasets.
    Render,
    /// Train the generator on the source renders.
    TrainGan,
    /// Project the target images into W.
    Project,
    /// Train the pose oracle and extract a calibrated pose direction.
    DiscoverDirection,
    /// Materialise the configured augmented training set.
    Augment,
    /// Run the real-data-reduction sweep.
    Sweep,
    /// Compare Grad-CAM attention of raw and augmented classifiers.
    Gradcam,
    /// Assemble figures, tables and the summary JSON.
    Report,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Render => Stage::Render,
            Command::TrainGan => Stage::TrainGan,
            Command::Project => Stage::Project,
            Command::DiscoverDirection => Stage::DiscoverDirection,
            Command::Augment => Stage::Augment,
            Command::Sweep => Stage::Sweep,
            Command::Gradcam => Stage::Gradcam,
            Command::Report => Stage::Report,
        }
    }
}

/// Reads `DAPPER_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("DAPPER_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("DAPPER_THREADS must be a positive integer, got `{v}`")),
        },
    }
}

/// Loads the config (or defaults) and applies command-line overrides.
/// A relative output root resolves against the config file's folder.
pub fn resolve(
    config: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<(ExperimentConfig, PathBuf), ConfigError> {
    let (mut cfg, base) = match config {
        Some(path) => (
            ExperimentConfig::load(path)?,
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let root = match out {
        Some(o) => o.to_path_buf(),
        None if cfg.paths.out.is_absolute() => cfg.paths.out.clone(),
        None => base.join(&cfg.paths.out),
    };
    Ok((cfg, root))
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match threads_from_env() {
        Ok(Some(n)) => {
            if !dapper_core::par::init_threads(n) {
                log::debug!("worker pool already initialised");
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    }
    let (cfg, out) = match resolve(cli.config.as_deref(), cli.out.as_deref(), cli.seed) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_USAGE;
        }
    };
    let pipeline = Pipeline {
        force: cli.stage_force,
        ..Pipeline::new(cfg, out)
    };
    let stage = cli.command.stage();
    match pipeline.run(stage) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("{stage} failed: {e}");
            EXIT_STAGE
        }
    }
}
