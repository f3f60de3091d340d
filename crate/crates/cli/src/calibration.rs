//! Pilot measurements that freeze thresholds and defaults, shared by the
//! calibration examples and the acceptance suite.

use dapper_core::augmenter::perturb;
use dapper_core::image::Image;
use dapper_core::inversion::{project_many, Init, ProjectionConfig, ProjectionResult};
use dapper_core::par::Exec;
use dapper_core::stylegan::{GanBundle, LatentW, WStats};
use dapper_core::{seed, Result};

/// Projects `n` images rendered from random latents, starting at the mean
/// latent. Returns the images with their projections.
pub fn recovery_trials(
    exec: Exec,
    bundle: &GanBundle,
    stats: &WStats,
    projection: &ProjectionConfig,
    n: usize,
    seed_: u64,
) -> Result<(Vec<Image>, Vec<ProjectionResult>)> {
    let (_, images) = bundle.sample(exec, n, seed::derive(seed_, "latents"))?;
    let cfg = ProjectionConfig {
        init: Init::MeanW,
        seed: seed::derive(seed_, "projection"),
        ..projection.clone()
    };
    let keys: Vec<u64> = (0..n as u64).collect();
    let results = project_many(exec, &images, &keys, bundle, stats, &cfg)?;
    Ok((images, results))
}

/// Linear-interpolated `q`-quantile (`q` in [0, 1]).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Fraction of latents whose label under `classify` survives all `k`
/// perturbations at `sigma`.
pub fn perturbation_identity<F>(
    exec: Exec,
    bundle: &GanBundle,
    stats: &WStats,
    latents: &[LatentW],
    sigma: f64,
    k: usize,
    seed_: u64,
    classify: F,
) -> Result<f64>
where
    F: Fn(&[Image]) -> Vec<usize>,
{
    let mut all = Vec::with_capacity(latents.len() * (k + 1));
    for (i, w) in latents.iter().enumerate() {
        all.push(w.clone());
        for j in 0..k {
            all.push(perturb(w, stats, sigma, seed::derive_index(seed_, "perturb", (i * k + j) as u64))?);
        }
    }
    let labels = classify(&bundle.render_images(exec, &all)?);
    let kept = labels.chunks(k + 1).filter(|l| l.iter().all(|&x| x == l[0])).count();
    Ok(kept as f64 / latents.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.9), 4.6);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn zero_sigma_keeps_every_label() {
        let bundle = GanBundle::init(1).unwrap();
        let stats = bundle.estimate_w_stats(10_000, 2).unwrap();
        let (ws, _) = bundle.sample(Exec::default(), 4, 3).unwrap();
        // A classifier keyed on exact pixel sums changes its answer for any
        // change of image.
        let classify = |imgs: &[Image]| -> Vec<usize> {
            imgs.iter().map(|im| (im.data.iter().map(|&v| v as f64).sum::<f64>() * 1e4) as usize % 97).collect()
        };
        let same = perturbation_identity(Exec::default(), &bundle, &stats, &ws, 0.0, 2, 4, classify).unwrap();
        assert_eq!(same, 1.0);
        let moved = perturbation_identity(Exec::default(), &bundle, &stats, &ws, 1.0, 2, 4, classify).unwrap();
        assert!(moved < 1.0);
    }
}
