//! Perturbation-scale pilot: label survival of projected target latents
//! under the reference classifier across a grid of sigma.
//!
//! `cargo run --release --example calibrate_sigma -- <config.json> <out-dir>`

use std::path::PathBuf;

use dapper_cli::calibration::perturbation_identity;
use dapper_cli::stages::{eval_latents, load_gan, read_json};
use dapper_cli::{Artifact, ExperimentConfig, Pipeline};
use dapper_core::evalhost::ClassifierBundle;
use dapper_core::inversion::load_latent_table;
use dapper_core::seed;
use dapper_core::stylegan::WStats;

const GRID: [f64; 12] = [0.025, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        return Err("usage: calibrate_sigma <config.json> <out-dir>".into());
    }
    let cfg = ExperimentConfig::load(&PathBuf::from(&args[1]))?;
    let p = Pipeline::new(cfg, &args[2]);
    let bundle = load_gan(&p)?;
    let stats: WStats = read_json(&p.path(Artifact::WStats))?;
    let table = load_latent_table(&p.path(Artifact::Latents))?;
    let latents = eval_latents(&p, &table)?;
    let reference = ClassifierBundle::load(&p.path(Artifact::Reference))?;
    let k = p.cfg.augmentation.policy.k;
    let mut best = None;
    for sigma in GRID {
        let kept = perturbation_identity(
            p.exec,
            &bundle,
            &stats,
            &latents,
            sigma,
            k,
            seed::derive(p.cfg.seed, "sigma-pilot"),
            |imgs| reference.predict(p.exec, imgs),
        )?;
        println!("sigma {sigma:<5} k {k} identity {kept:.3}");
        if kept >= 0.6 {
            best = Some(sigma);
        }
    }
    match best {
        Some(s) => println!("largest sigma with identity >= 0.6: {s}"),
        None => println!("no sigma on the grid keeps identity >= 0.6"),
    }
    Ok(())
}
