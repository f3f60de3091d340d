//! Projection of images into the generator's latent space by optimising the
//! latent against the frozen generator.

#[cfg(test)]
mod tests;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_model, Image, SIZE};
use crate::numerics::{adam_step, AdamConfig, AdamState, Array, ParamStore, Tape};
use crate::par::{self, Exec};
use crate::scenegen::DatasetManifest;
use crate::seed;
use crate::stylegan::{
    discriminator, sample_z, stack_latents, synthesis, GanBundle, LatentW, Space, Styles, WStats, NUM_BLOCKS, W_DIM,
};

/// Images optimised jointly on one tape.
pub const PROJECT_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Init {
    /// The mean mapped latent.
    MeanW,
    Provided { w: LatentW },
    /// A freshly mapped random `z`.
    RandomZ { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub steps: usize,
    pub space: Space,
    pub init: Init,
    pub lr_peak: f64,
    /// Fraction of the run spent ramping the learning rate up.
    pub lr_rampup: f64,
    /// Fraction of the run spent ramping it back down (cosine).
    pub lr_rampdown: f64,
    /// Initial latent noise as a multiple of the mean per-dimension W std.
    pub noise_ratio: f64,
    /// Fraction of the run after which latent noise is zero.
    pub noise_ramp: f64,
    pub lambda_pixel: f64,
    pub lambda_feat: f64,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            steps: 400,
            space: Space::W,
            init: Init::MeanW,
            lr_peak: 0.05,
            lr_rampup: 0.05,
            lr_rampdown: 0.25,
            noise_ratio: 0.05,
            noise_ramp: 0.75,
            lambda_pixel: 1.0,
            lambda_feat: 0.1,
            seed: 0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        let nonneg = [
            ("lr_peak", self.lr_peak),
            ("lr_rampup", self.lr_rampup),
            ("lr_rampdown", self.lr_rampdown),
            ("noise_ratio", self.noise_ratio),
            ("noise_ramp", self.noise_ramp),
            ("lambda_pixel", self.lambda_pixel),
            ("lambda_feat", self.lambda_feat),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be finite and non-negative"));
            }
        }
        if let Init::Provided { w } = &self.init {
            if !w.is_finite() {
                return Err(Error::non_finite("provided initial latent"));
            }
        }
        Ok(())
    }

    /// Learning rate at `step`: cosine ramp-down over the last
    /// `lr_rampdown` of the run, linear ramp-up over the first `lr_rampup`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let t = step as f64 / self.steps as f64;
        let mut r = if self.lr_rampdown > 0.0 {
            ((1.0 - t) / self.lr_rampdown).min(1.0)
        } else {
            1.0
        };
        r = 0.5 - 0.5 * (r * std::f64::consts::PI).cos();
        if self.lr_rampup > 0.0 {
            r *= (t / self.lr_rampup).min(1.0);
        }
        self.lr_peak * r
    }

    /// Latent noise std at `step`, decaying linearly to zero.
    pub fn noise_at(&self, step: usize, w_std: f64) -> f64 {
        if self.noise_ramp <= 0.0 {
            return 0.0;
        }
        let t = step as f64 / self.steps as f64;
        self.noise_ratio * w_std * (1.0 - t / self.noise_ramp).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub w_star: LatentW,
    /// Total loss at every step.
    pub loss_curve: Vec<f64>,
    /// Pixel MSE (on the `[-1, 1]` model scale) of `w_star`.
    pub final_mse: f64,
    pub best_step: usize,
    pub config: ProjectionConfig,
    pub wall_seconds: f64,
}

impl ProjectionResult {
    pub fn best_loss(&self) -> f64 {
        self.loss_curve[self.best_step]
    }

    /// Running minimum of the loss curve.
    pub fn envelope(&self) -> Vec<f64> {
        self.loss_curve
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }
}

fn check_image(img: &Image) -> Result<()> {
    if img.height != SIZE || img.width != SIZE || img.channels != 3 {
        return Err(Error::shape(
            "project",
            format!("expected {SIZE}x{SIZE}x3 image, got {}x{}x{}", img.height, img.width, img.channels),
        ));
    }
    Ok(())
}

fn initial_latent(cfg: &ProjectionConfig, bundle: &GanBundle, stats: &WStats) -> Result<LatentW> {
    let w = match &cfg.init {
        Init::MeanW => stats.mean_latent(),
        Init::Provided { w } => w.clone(),
        Init::RandomZ { seed: s } => {
            let z = sample_z(1, &mut seed::rng(*s));
            bundle.map_z(z.data())?
        }
    };
    Ok(match (cfg.space, w.space()) {
        (Space::WPlus, Space::W) => w.to_w_plus(),
        (Space::W, Space::WPlus) => {
            return Err(Error::param("init", "a W+ latent cannot initialise a W projection"));
        }
        _ => w,
    })
}

/// Projects one image. See [`project_batch`].
pub fn project(image: &Image, bundle: &GanBundle, stats: &WStats, cfg: &ProjectionConfig) -> Result<ProjectionResult> {
    let mut out = project_batch(std::slice::from_ref(image), &[cfg.seed], bundle, stats, cfg)?;
    Ok(out.remove(0))
}

/// Projects several images jointly (their losses are independent, so the
/// joint optimisation equals separate ones). `noise_seeds[i]` drives the
/// latent noise of image `i`.
///
/// The first step evaluates the initial latent itself; noise is added from
/// the second step on. The latent with the lowest evaluated loss is
/// returned, the earliest one on ties.
pub fn project_batch(
    images: &[Image],
    noise_seeds: &[u64],
    bundle: &GanBundle,
    stats: &WStats,
    cfg: &ProjectionConfig,
) -> Result<Vec<ProjectionResult>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("no images to project".into()));
    }
    if noise_seeds.len() != images.len() {
        return Err(Error::param("noise_seeds", "one seed per image required"));
    }
    images.iter().try_for_each(check_image)?;
    let start = Instant::now();
    let checksum = bundle.generator_checksum();
    let mut generator = bundle.generator.clone();
    generator.freeze_all();
    let mut disc = bundle.discriminator.clone();
    disc.freeze_all();

    let b = images.len();
    let init = initial_latent(cfg, bundle, stats)?;
    let (space, lat0) = stack_latents(&vec![init; b])?;
    let target = to_model(images);
    let target_feats: Vec<Array<f32>> = {
        let tape = Tape::new();
        let d = disc.bind(&tape);
        let (_, feats) = discriminator(&d, tape.constant(target.clone()));
        feats.iter().map(|f| (*f.value()).clone()).collect()
    };

    let mut latent = ParamStore::new();
    latent.insert("w", lat0.clone())?;
    let mut adam = AdamState::new();
    let w_std = stats.mean_std();
    let mut rngs: Vec<seed::Rng> = noise_seeds
        .iter()
        .map(|&s| seed::rng(seed::derive(s, "projection-noise")))
        .collect();
    let per = lat0.len() / b;
    let mut curves = vec![Vec::with_capacity(cfg.steps); b];
    let mut best: Vec<(f64, f64, usize, Vec<f32>)> = vec![(f64::INFINITY, f64::NAN, 0, Vec::new()); b];

    for step in 0..cfg.steps {
        let noise = if step == 0 { 0.0 } else { cfg.noise_at(step, w_std) };
        let mut eval = latent.get("w").unwrap().clone();
        if noise > 0.0 {
            for (i, row) in eval.data_mut().chunks_mut(per).enumerate() {
                for v in row {
                    let e: f32 = StandardNormal.sample(&mut rngs[i]);
                    *v += noise as f32 * e;
                }
            }
        }
        let tape = Tape::new();
        let g = generator.bind(&tape);
        let d = disc.bind(&tape);
        let wv = tape.leaf(eval.clone(), true);
        let styles = match space {
            Space::W => Styles::W(wv),
            Space::WPlus => Styles::WPlus(wv),
        };
        let x = synthesis(&g, styles);
        let pixel = x.sub_const(&target).square().mean_per_row();
        let (_, feats) = discriminator(&d, x);
        let mut loss = pixel.scale(cfg.lambda_pixel as f32);
        for (f, t) in feats.iter().zip(&target_feats) {
            loss = loss.add(f.sub_const(t).square().mean_per_row().scale(cfg.lambda_feat as f32));
        }
        let (lv, pv) = (loss.value(), pixel.value());
        for i in 0..b {
            let l = lv.data()[i] as f64;
            if !l.is_finite() {
                return Err(Error::Diverged { step, loss: l });
            }
            curves[i].push(l);
            if l < best[i].0 {
                best[i] = (l, pv.data()[i] as f64, step, eval.data()[i * per..(i + 1) * per].to_vec());
            }
        }
        let mut grads = tape.backward(loss.sum());
        let gw = grads.take(wv).expect("latent gradient");
        let lr = cfg.lr_at(step);
        if lr > 0.0 {
            let step_cfg = AdamConfig { lr, ..AdamConfig::default() };
            adam_step(&mut latent, &[("w".to_string(), gw)].into(), &mut adam, &step_cfg)?;
        }
    }

    if bundle.generator_checksum() != checksum || generator.checksum() != checksum {
        return Err(Error::FrozenViolation("generator changed during projection".into()));
    }
    let wall = start.elapsed().as_secs_f64() / b as f64;
    best.into_iter()
        .zip(curves)
        .map(|((_, mse, step, w), curve)| {
            Ok(ProjectionResult {
                w_star: LatentW::new(space, w)?,
                loss_curve: curve,
                final_mse: mse,
                best_step: step,
                config: cfg.clone(),
                wall_seconds: wall,
            })
        })
        .collect()
}

/// Projects many images in chunks of [`PROJECT_CHUNK`], chunks running in
/// parallel under [`Exec::Parallel`]. Image `i` uses noise seed
/// `derive_index(cfg.seed, "image", keys[i])`.
pub fn project_many(
    exec: Exec,
    images: &[Image],
    keys: &[u64],
    bundle: &GanBundle,
    stats: &WStats,
    cfg: &ProjectionConfig,
) -> Result<Vec<ProjectionResult>> {
    let seeds: Vec<u64> = keys.iter().map(|&k| seed::derive_index(cfg.seed, "image", k)).collect();
    let jobs: Vec<(usize, usize)> = (0..images.len())
        .step_by(PROJECT_CHUNK)
        .map(|s| (s, (s + PROJECT_CHUNK).min(images.len())))
        .collect();
    let parts = par::map_slice(exec, &jobs, |&(s, e)| project_batch(&images[s..e], &seeds[s..e], bundle, stats, cfg));
    let mut out = Vec::with_capacity(images.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// One row of a latent table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentRecord {
    pub sample_id: String,
    pub space: Space,
    pub w: Vec<f32>,
    pub final_mse: f64,
    pub best_step: usize,
}

impl LatentRecord {
    pub fn latent(&self) -> Result<LatentW> {
        LatentW::new(self.space, self.w.clone())
    }

    /// The W-space vector (block average for W+ latents).
    pub fn w_vector(&self) -> Vec<f32> {
        match self.space {
            Space::W => self.w.clone(),
            Space::WPlus => (0..W_DIM)
                .map(|j| (0..NUM_BLOCKS).map(|b| self.w[b * W_DIM + j]).sum::<f32>() / NUM_BLOCKS as f32)
                .collect(),
        }
    }
}

pub fn load_latent_table(path: &Path) -> Result<Vec<LatentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let r: LatentRecord = serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
            r.latent()?;
            Ok(r)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BatchReport {
    pub projected: usize,
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
}

/// Projects every record of the manifest at `manifest_path` not yet present
/// in the latent table at `table_path`, appending one JSON line per result.
/// Unreadable images are reported per record; the call fails only if every
/// pending record failed.
pub fn batch_project(
    exec: Exec,
    manifest_path: &Path,
    table_path: &Path,
    bundle: &GanBundle,
    stats: &WStats,
    cfg: &ProjectionConfig,
) -> Result<BatchReport> {
    let manifest = DatasetManifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Empty(format!("{}: manifest has no records", manifest_path.display())));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let done: HashSet<String> = if table_path.exists() {
        load_latent_table(table_path)?.into_iter().map(|r| r.sample_id).collect()
    } else {
        HashSet::new()
    };
    let mut report = BatchReport::default();
    let mut pending = Vec::new();
    for (i, rec) in manifest.records.iter().enumerate() {
        if done.contains(&rec.id) {
            report.skipped += 1;
            continue;
        }
        match Image::load_png(&base.join(&rec.path)).and_then(|img| check_image(&img).map(|_| img)) {
            Ok(img) => pending.push((i, rec.id.clone(), img)),
            Err(e) => {
                log::warn!("{}: {e}", rec.id);
                report.failed.push((rec.id.clone(), e.to_string()));
            }
        }
    }
    if pending.is_empty() {
        if !report.failed.is_empty() {
            return Err(Error::Empty(format!("all {} pending projections failed", report.failed.len())));
        }
        return Ok(report);
    }
    if let Some(dir) = table_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(table_path)
        .map_err(|e| Error::io(table_path, e))?;
    // Write in groups so an interrupted run keeps finished work.
    let group = PROJECT_CHUNK * par::threads().max(1);
    for part in pending.chunks(group) {
        let images: Vec<Image> = part.iter().map(|(_, _, img)| img.clone()).collect();
        let keys: Vec<u64> = part.iter().map(|(i, _, _)| *i as u64).collect();
        let results = project_many(exec, &images, &keys, bundle, stats, cfg)?;
        let mut text = String::new();
        for ((_, id, _), r) in part.iter().zip(results) {
            let rec = LatentRecord {
                sample_id: id.clone(),
                space: r.w_star.space(),
                w: r.w_star.values().to_vec(),
                final_mse: r.final_mse,
                best_step: r.best_step,
            };
            text.push_str(&serde_json::to_string(&rec)?);
            text.push('\n');
        }
        file.write_all(text.as_bytes()).map_err(|e| Error::io(table_path, e))?;
        report.projected += part.len();
        log::info!("projected {}/{}", report.projected, pending.len());
    }
    Ok(report)
}

/// Per-pixel mean of `images` on the model scale, `[3, H, W]`.
pub fn mean_image_baseline(images: &[Image]) -> Result<Array<f32>> {
    if images.is_empty() {
        return Err(Error::Empty("no images for the mean image".into()));
    }
    let all = to_model(images);
    let per = all.len() / images.len();
    let mut mean = vec![0f32; per];
    for row in all.data().chunks(per) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= images.len() as f32);
    Array::from_vec(&[3, SIZE, SIZE], mean)
}

/// Pixel MSE between an image and a `[3, H, W]` model-scale array.
pub fn model_mse(image: &Image, reference: &Array<f32>) -> f64 {
    let x = to_model(std::slice::from_ref(image));
    x.data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / reference.len() as f64
}
