//! Recovery-threshold pilot: projects images rendered from known latents and
//! prints quantiles of the final pixel MSE.
//!
//! `cargo run --release --example calibrate_tau -- <config.json> <out-dir> [trials] [seed-label]`

use std::path::PathBuf;

use dapper_cli::calibration::{quantile, recovery_trials};
use dapper_cli::stages::{load_gan, projection_config, read_json};
use dapper_cli::{Artifact, ExperimentConfig, Pipeline};
use dapper_core::seed;
use dapper_core::stylegan::WStats;

/// The threshold frozen in the acceptance target, for replication runs.
const FROZEN_TAU: f64 = 0.006085;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        return Err("usage: calibrate_tau <config.json> <out-dir> [trials] [seed-label]".into());
    }
    let cfg = ExperimentConfig::load(&PathBuf::from(&args[1]))?;
    let trials: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let label = args.get(4).map_or("tau-pilot", String::as_str);
    let p = Pipeline::new(cfg, &args[2]);
    let bundle = load_gan(&p)?;
    let stats: WStats = read_json(&p.path(Artifact::WStats))?;
    let start = std::time::Instant::now();
    let (_, results) = recovery_trials(
        p.exec,
        &bundle,
        &stats,
        &projection_config(&p),
        trials,
        seed::derive(p.cfg.seed, label),
    )?;
    let mse: Vec<f64> = results.iter().map(|r| r.final_mse).collect();
    println!("trials {trials} in {:.1}s", start.elapsed().as_secs_f64());
    let above = mse.iter().filter(|&&v| v > FROZEN_TAU).count();
    println!("above frozen tau {FROZEN_TAU}: {above}/{trials}");
    for q in [0.5, 0.75, 0.9, 0.95, 1.0] {
        println!("q{:<4} {:.6}", q, quantile(&mse, q));
    }
    Ok(())
}
