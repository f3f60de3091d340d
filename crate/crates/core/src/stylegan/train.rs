//! Adversarial training with the non-saturating logistic loss and a lazily
//! applied R1 penalty on real images.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::nets::{discriminator, discriminator_directional, mapping, normalize_z, synthesis, Styles};
use super::{sample_z, GanBundle};
use crate::error::{Error, Result};
use crate::image::to_model;
use crate::numerics::{adam_step, AdamConfig, AdamState, Array, ParamStore, Real, Tape};
use crate::scenegen::Dataset;
use crate::seed;

/// Fewest source images accepted by [`train_gan`].
pub const MIN_SOURCE_IMAGES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub r1_gamma: f64,
    /// R1 is evaluated every this many steps, scaled up to compensate.
    pub r1_interval: usize,
    /// Decay of the generator weight average that is returned.
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            steps: 3000,
            batch: 32,
            lr: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            r1_gamma: 1.0,
            r1_interval: 4,
            ema_decay: 0.998,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::param("batch", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("ema_decay", self.ema_decay)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::param(name, "must lie in [0, 1)"));
            }
        }
        if !(self.r1_gamma >= 0.0 && self.r1_gamma.is_finite()) {
            return Err(Error::param("r1_gamma", "must be non-negative"));
        }
        if self.r1_interval == 0 {
            return Err(Error::param("r1_interval", "must be at least 1"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bundle: GanBundle,
    pub log: Vec<LossRecord>,
    pub wall_seconds: f64,
}

fn fake_batch(generator: &ParamStore<f32>, n: usize, rng: &mut seed::Rng) -> Array<f32> {
    let tape = Tape::new();
    let g = generator.bind_constants(&tape);
    let z = tape.constant(normalize_z(&sample_z(n, rng)));
    let x = synthesis(&g, Styles::W(mapping(&g, z)));
    (*x.value()).clone()
}

fn add_grads<T: Real>(into: &mut BTreeMap<String, Array<T>>, from: BTreeMap<String, Array<T>>) {
    for (k, g) in from {
        match into.get_mut(&k) {
            Some(acc) => acc.add_assign(&g),
            None => {
                into.insert(k, g);
            }
        }
    }
}

/// Gradient of the summed discriminator logits with respect to its input.
fn input_grad<T: Real>(disc: &ParamStore<T>, x: &Array<T>) -> Array<T> {
    let tape = Tape::new();
    let d = disc.bind_constants(&tape);
    let xv = tape.leaf(x.clone(), true);
    let (logits, _) = discriminator(&d, xv);
    let mut g = tape.backward(logits.sum());
    g.take(xv).unwrap_or_else(|| Array::zeros(x.shape()))
}

/// R1 penalty `γ/2 · mean_i ‖∇ₓD(xᵢ)‖²`.
pub fn r1_penalty<T: Real>(disc: &ParamStore<T>, x: &Array<T>, gamma: f64) -> f64 {
    let g = input_grad(disc, x);
    let n = x.dim(0);
    let per = x.len() / n;
    let total: f64 = g
        .data()
        .chunks(per)
        .map(|row| row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>())
        .sum();
    0.5 * gamma * total / n as f64
}

/// Value and parameter gradients of [`r1_penalty`].
///
/// The parameter gradient of `γ/2 ‖gᵢ‖²` is `γ · ∂θ(gᵢ·∇ₓD(xᵢ))` with `gᵢ`
/// held fixed, so it is obtained by backpropagating through a tangent pass
/// of the discriminator along `gᵢ` rather than through a second backward.
pub fn r1_grads<T: Real>(disc: &ParamStore<T>, x: &Array<T>, gamma: f64) -> (f64, BTreeMap<String, Array<T>>) {
    let g = input_grad(disc, x);
    let n = x.dim(0);
    let value = 0.5 * gamma * g.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / n as f64;
    let tape = Tape::new();
    let d = disc.bind(&tape);
    let obj = discriminator_directional(&d, x, &g).sum().scale(T::lit(gamma / n as f64));
    let grads = d.grads(&tape.backward(obj));
    (value, grads)
}

fn check_finite(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, loss })
    }
}

/// Trains a fresh bundle on the images of `source` (labels are ignored).
/// The returned generator is the exponential moving average of the trained
/// weights.
pub fn train_gan(source: &Dataset, cfg: &GanConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.len() < MIN_SOURCE_IMAGES {
        return Err(Error::param(
            "source",
            format!("need at least {MIN_SOURCE_IMAGES} images, got {}", source.len()),
        ));
    }
    let real = to_model(&source.images);
    let mut bundle = GanBundle::init(cfg.seed)?;
    let mut ema = bundle.generator.clone();
    let mut rng = seed::rng(seed::derive(cfg.seed, "gan-train"));
    let adam = cfg.adam();
    let mut g_state = AdamState::new();
    let mut d_state = AdamState::new();
    let mut log = Vec::with_capacity(cfg.steps);
    let start = Instant::now();

    for step in 0..cfg.steps {
        // Discriminator.
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..real.dim(0))).collect();
        let real_batch = real.select_rows(&idx);
        let fake = fake_batch(&bundle.generator, cfg.batch, &mut rng);
        let (d_loss, mut d_grads) = {
            let tape = Tape::new();
            let d = bundle.discriminator.bind(&tape);
            let (lf, _) = discriminator(&d, tape.constant(fake));
            let (lr, _) = discriminator(&d, tape.constant(real_batch.clone()));
            let loss = lf.softplus().mean().add(lr.scale(-1.0).softplus().mean());
            (loss.item() as f64, d.grads(&tape.backward(loss)))
        };
        check_finite(step, d_loss)?;
        let mut r1 = None;
        if cfg.r1_gamma > 0.0 && step % cfg.r1_interval == 0 {
            let gamma = cfg.r1_gamma * cfg.r1_interval as f64;
            let (value, grads) = r1_grads(&bundle.discriminator, &real_batch, gamma);
            let value = value / cfg.r1_interval as f64;
            check_finite(step, value)?;
            add_grads(&mut d_grads, grads);
            r1 = Some(value);
        }
        adam_step(&mut bundle.discriminator, &d_grads, &mut d_state, &adam)?;

        // Generator.
        let (g_loss, g_grads) = {
            let tape = Tape::new();
            let g = bundle.generator.bind(&tape);
            let d = bundle.discriminator.bind_constants(&tape);
            let z = tape.constant(normalize_z(&sample_z(cfg.batch, &mut rng)));
            let fake = synthesis(&g, Styles::W(mapping(&g, z)));
            let (lf, _) = discriminator(&d, fake);
            let loss = lf.scale(-1.0).softplus().mean();
            (loss.item() as f64, g.grads(&tape.backward(loss)))
        };
        check_finite(step, g_loss)?;
        adam_step(&mut bundle.generator, &g_grads, &mut g_state, &adam)?;

        // Early steps average over a shorter window so the average is not
        // dominated by the random initialisation.
        let decay = cfg.ema_decay.min((1.0 + step as f64) / (10.0 + step as f64)) as f32;
        for (name, p) in bundle.generator.iter() {
            let avg = ema.get_mut(name).expect("same parameter set");
            for (a, &v) in avg.data_mut().iter_mut().zip(p.value.data()) {
                *a = decay * *a + (1.0 - decay) * v;
            }
        }

        let rec = LossRecord { step, d_loss, g_loss, r1 };
        if step % 100 == 0 || step + 1 == cfg.steps {
            log::info!(
                "gan step {step}/{}: d {:.4} g {:.4} ({:.0}s)",
                cfg.steps,
                d_loss,
                g_loss,
                start.elapsed().as_secs_f64()
            );
        }
        log.push(rec);
    }
    if !ema.all_finite() {
        return Err(Error::non_finite("generator weights after training"));
    }
    bundle.generator = ema;
    Ok(TrainOutcome {
        bundle,
        log,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fraction of `real` images and an equal number of generated ones that the
/// discriminator classifies correctly (positive logit means real).
pub fn discriminator_accuracy(bundle: &GanBundle, real: &Array<f32>, seed_: u64) -> f64 {
    let n = real.dim(0);
    let fake = fake_batch(&bundle.generator, n, &mut seed::rng(seed_));
    let tape = Tape::new();
    let d = bundle.discriminator.bind_constants(&tape);
    let (lr, _) = discriminator(&d, tape.constant(real.clone()));
    let (lf, _) = discriminator(&d, tape.constant(fake));
    let correct = lr.value().data().iter().filter(|&&v| v > 0.0).count()
        + lf.value().data().iter().filter(|&&v| v <= 0.0).count();
    correct as f64 / (2 * n) as f64
}
