//! Miniature style-based GAN: a mapping network `z -> w`, a synthesis network
//! whose convolutions are modulated by `w`, a discriminator, and the
//! adversarial training loop.

mod nets;
mod train;

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use nets::{
    discriminator, discriminator_directional, init_discriminator, init_generator, mapping, modulated_conv, normalize_z, synthesis,
    Styles, DISC_CHANNELS, NUM_BLOCKS, SYNTH_BLOCKS, W_DIM, Z_DIM,
};
pub use train::{
    discriminator_accuracy, r1_grads, r1_penalty, train_gan, GanConfig, LossRecord, TrainOutcome, MIN_SOURCE_IMAGES,
};

use crate::error::{Error, Result};
use crate::image::{from_model, Image};
use crate::numerics::{checkpoint, grad_check, Array, Bound, GradCheckOptions, GradCheckReport, ParamStore, Tape};
use crate::par::{self, Exec};
use crate::seed;

/// Images are synthesised in chunks of this many latents per tape.
pub const INFER_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    W,
    WPlus,
}

impl Space {
    pub fn len(self) -> usize {
        match self {
            Space::W => W_DIM,
            Space::WPlus => NUM_BLOCKS * W_DIM,
        }
    }
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::W => "w",
            Space::WPlus => "w-plus",
        })
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w" => Ok(Space::W),
            "w+" | "w-plus" | "wplus" => Ok(Space::WPlus),
            other => Err(Error::param("space", format!("unknown latent space `{other}`"))),
        }
    }
}

/// A latent in W (one vector) or W+ (one vector per synthesis block).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLatent")]
pub struct LatentW {
    space: Space,
    values: Vec<f32>,
}

#[derive(Deserialize)]
struct RawLatent {
    space: Space,
    values: Vec<f32>,
}

impl TryFrom<RawLatent> for LatentW {
    type Error = Error;

    fn try_from(raw: RawLatent) -> Result<Self> {
        LatentW::new(raw.space, raw.values)
    }
}

impl LatentW {
    pub fn new(space: Space, values: Vec<f32>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::param(
                "values",
                format!("{space} latent needs {} values, got {}", space.len(), values.len()),
            ));
        }
        Ok(LatentW { space, values })
    }

    pub fn w(values: Vec<f32>) -> Result<Self> {
        Self::new(Space::W, values)
    }

    pub fn w_plus(values: Vec<f32>) -> Result<Self> {
        Self::new(Space::WPlus, values)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// The vector fed to synthesis block `i`.
    pub fn block(&self, i: usize) -> &[f32] {
        match self.space {
            Space::W => &self.values,
            Space::WPlus => &self.values[i * W_DIM..(i + 1) * W_DIM],
        }
    }

    /// The same latent expressed in W+ (W is repeated per block).
    pub fn to_w_plus(&self) -> LatentW {
        match self.space {
            Space::WPlus => self.clone(),
            Space::W => LatentW {
                space: Space::WPlus,
                values: self.values.repeat(NUM_BLOCKS),
            },
        }
    }

    /// Adds `c·d` to every block, where `d` is a W-space vector.
    pub fn shifted(&self, d: &[f32], c: f32) -> LatentW {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v += c * d[i % W_DIM];
        }
        out
    }
}

/// Stacks latents of one space into `[N, W_DIM]` or `[N, NUM_BLOCKS, W_DIM]`.
pub fn stack_latents(ws: &[LatentW]) -> Result<(Space, Array<f32>)> {
    let space = ws.first().ok_or_else(|| Error::Empty("no latents".into()))?.space;
    let mut data = Vec::with_capacity(ws.len() * space.len());
    for w in ws {
        if w.space != space {
            return Err(Error::param("space", "latents in one batch must share a space"));
        }
        if !w.is_finite() {
            return Err(Error::non_finite("latent w"));
        }
        data.extend_from_slice(&w.values);
    }
    let shape = match space {
        Space::W => vec![ws.len(), W_DIM],
        Space::WPlus => vec![ws.len(), NUM_BLOCKS, W_DIM],
    };
    Ok((space, Array::from_vec(&shape, data)?))
}

/// Draws `n` standard-normal latents `[n, Z_DIM]`.
pub fn sample_z(n: usize, rng: &mut seed::Rng) -> Array<f32> {
    let data = (0..n * Z_DIM).map(|_| StandardNormal.sample(rng)).collect();
    Array::from_vec(&[n, Z_DIM], data).unwrap()
}

/// Mean and per-dimension standard deviation of mapped latents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub samples: usize,
}

impl WStats {
    pub fn mean_latent(&self) -> LatentW {
        LatentW::w(self.mean.clone()).unwrap()
    }

    pub fn mean_std(&self) -> f64 {
        self.std.iter().map(|&s| s as f64).sum::<f64>() / self.std.len() as f64
    }
}

/// Minimum number of mapped samples behind a [`WStats`].
pub const MIN_STATS_SAMPLES: usize = 10_000;

/// Generator and discriminator parameters.
#[derive(Clone, Debug)]
pub struct GanBundle {
    pub generator: ParamStore<f32>,
    pub discriminator: ParamStore<f32>,
}

impl GanBundle {
    pub fn init(seed_: u64) -> Result<Self> {
        let mut rng = seed::rng(seed::derive(seed_, "gan-init"));
        Ok(GanBundle {
            generator: init_generator(&mut rng)?,
            discriminator: init_discriminator(&mut rng)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.generator.num_scalars() + self.discriminator.num_scalars()
    }

    pub fn generator_checksum(&self) -> u64 {
        self.generator.checksum()
    }

    /// Maps each row of `z[N, Z_DIM]` to `[N, W_DIM]`.
    pub fn map_z_batch(&self, z: &Array<f32>) -> Result<Array<f32>> {
        if z.shape().len() != 2 || z.shape()[1] != Z_DIM {
            return Err(Error::shape("map_z", format!("expected [N, {Z_DIM}], got {:?}", z.shape())));
        }
        let tape = Tape::new();
        let p = self.generator.bind_constants(&tape);
        let w = mapping(&p, tape.constant(normalize_z(z)));
        Ok((*w.value()).clone())
    }

    pub fn map_z(&self, z: &[f32]) -> Result<LatentW> {
        let w = self.map_z_batch(&Array::from_vec(&[1, z.len()], z.to_vec())?)?;
        LatentW::w(w.into_vec())
    }

    /// Synthesises one image `[3, 32, 32]` in `[-1, 1]`.
    pub fn synthesize(&self, w: &LatentW) -> Result<Array<f32>> {
        let batch = self.synthesize_chunk(std::slice::from_ref(w))?;
        let shape = batch.shape()[1..].to_vec();
        batch.reshape(&shape)
    }

    fn synthesize_chunk(&self, ws: &[LatentW]) -> Result<Array<f32>> {
        let (space, lat) = stack_latents(ws)?;
        let tape = Tape::new();
        let p = self.generator.bind_constants(&tape);
        let v = tape.constant(lat);
        let styles = match space {
            Space::W => Styles::W(v),
            Space::WPlus => Styles::WPlus(v),
        };
        let out = synthesis(&p, styles);
        Ok((*out.value()).clone())
    }

    /// Synthesises `[N, 3, 32, 32]`, chunked and optionally in parallel.
    pub fn synthesize_batch(&self, exec: Exec, ws: &[LatentW]) -> Result<Array<f32>> {
        let chunks: Vec<&[LatentW]> = ws.chunks(INFER_CHUNK).collect();
        let parts = par::map_slice(exec, &chunks, |c| self.synthesize_chunk(c));
        let mut images = Vec::with_capacity(ws.len());
        for part in parts {
            images.extend(part?.unstack());
        }
        Array::stack(&images)
    }

    /// Synthesises and converts to `[0, 1]` images.
    pub fn render_images(&self, exec: Exec, ws: &[LatentW]) -> Result<Vec<Image>> {
        Ok(from_model(&self.synthesize_batch(exec, ws)?))
    }

    /// Samples images from random `z`, returning the latents alongside.
    pub fn sample(&self, exec: Exec, n: usize, seed_: u64) -> Result<(Vec<LatentW>, Vec<Image>)> {
        let z = sample_z(n, &mut seed::rng(seed_));
        let w = self.map_z_batch(&z)?;
        let ws = w
            .data()
            .chunks(W_DIM)
            .map(|c| LatentW::w(c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let images = self.render_images(exec, &ws)?;
        Ok((ws, images))
    }

    pub fn estimate_w_stats(&self, n: usize, seed_: u64) -> Result<WStats> {
        if n < MIN_STATS_SAMPLES {
            return Err(Error::param("n", format!("need at least {MIN_STATS_SAMPLES} samples, got {n}")));
        }
        let mut rng = seed::rng(seed::derive(seed_, "w-stats"));
        let mut sum = vec![0f64; W_DIM];
        let mut sq = vec![0f64; W_DIM];
        let mut done = 0;
        while done < n {
            let m = (n - done).min(1000);
            let w = self.map_z_batch(&sample_z(m, &mut rng))?;
            for row in w.data().chunks(W_DIM) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
            }
            done += m;
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / nf - m * m).max(0.0) * nf / (nf - 1.0)).sqrt() as f32)
            .collect();
        Ok(WStats {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
            samples: n,
        })
    }

    /// Writes both networks into one checkpoint.
    pub fn save(&self, path: &Path, meta: &serde_json::Value) -> Result<()> {
        let mut all = self.generator.clone();
        all.extend(self.discriminator.clone())?;
        checkpoint::save(path, &all, meta)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (all, meta) = checkpoint::load(path)?;
        let mut generator = all.subset("map.");
        generator.extend(all.subset("syn."))?;
        let discriminator = all.subset("disc.");
        let expected = GanBundle::init(0)?;
        for (want, got, what) in [
            (&expected.generator, &generator, "generator"),
            (&expected.discriminator, &discriminator, "discriminator"),
        ] {
            let same = want.len() == got.len()
                && want.iter().all(|(k, p)| got.get(k).is_some_and(|a| a.shape() == p.value.shape()));
            if !same {
                return Err(Error::Format(format!(
                    "{}: {what} parameters do not match this architecture",
                    path.display()
                )));
            }
        }
        Ok((GanBundle { generator, discriminator }, meta))
    }
}

/// Finite-difference check of the generator in f64: mapping, both latent
/// input modes and every synthesis weight, on fixed random inputs. The step
/// is kept small so probes rarely straddle a leaky-ReLU kink.
pub fn check_generator_grads(seed_: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = seed::rng(seed::derive(seed_, "gen-gradcheck"));
    let mut store: ParamStore<f64> = init_generator(&mut rng)?;
    let n = 2;
    store.insert("input.w_plus", Array::randn(&[n, NUM_BLOCKS, W_DIM], 0.5, &mut rng))?;
    let z = normalize_z(&Array::<f64>::randn(&[n, Z_DIM], 1.0, &mut rng));
    let m1 = Array::<f64>::randn(&[n, 3, 32, 32], 1.0, &mut rng);
    let m2 = Array::<f64>::randn(&[n, 3, 32, 32], 1.0, &mut rng);
    grad_check(
        |t, p: &Bound<'_, f64>| {
            let a = synthesis(p, Styles::W(mapping(p, t.constant(z.clone()))));
            let b = synthesis(p, Styles::WPlus(p.get("input.w_plus")));
            Ok(a.mul_const(&m1).sum().add(b.mul_const(&m2).sum()))
        },
        &store,
        1e-7,
        opts,
    )
}

/// Finite-difference check of the discriminator in f64, through both the
/// logits and the intermediate feature maps, including the input gradient.
pub fn check_discriminator_grads(seed_: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = seed::rng(seed::derive(seed_, "disc-gradcheck"));
    let mut store: ParamStore<f64> = init_discriminator(&mut rng)?;
    store.insert("input.x", Array::randn(&[3, 3, 32, 32], 0.5, &mut rng))?;
    let masks: Vec<Array<f64>> = DISC_CHANNELS
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let r = 32 >> (i + 1);
            Array::randn(&[3, c, r, r], 1.0, &mut rng)
        })
        .collect();
    grad_check(
        |_, p: &Bound<'_, f64>| {
            let (logits, feats) = discriminator(p, p.get("input.x"));
            let mut loss = logits.softplus().sum();
            for (f, m) in feats.iter().zip(&masks) {
                loss = loss.add(f.mul_const(m).sum());
            }
            Ok(loss)
        },
        &store,
        1e-6,
        opts,
    )
}
