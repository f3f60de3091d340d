//! Synthetic training images from projected latents (random perturbation or
//! pose traversal), baseline affine transforms, and mixed real/synthetic
//! training sets.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::inversion::{project, LatentRecord, ProjectionConfig};
use crate::par::{self, Exec};
use crate::scenegen::{Dataset, DatasetManifest, Provenance, Record};
use crate::seed;
use crate::semdir::{traverse, DirectionVector};
use crate::stylegan::{GanBundle, LatentW, WStats, W_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentKind {
    Perturb,
    Traverse,
    Affine,
    None,
}

impl AugmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Perturb => "perturb",
            AugmentKind::Traverse => "traverse",
            AugmentKind::Affine => "affine",
            AugmentKind::None => "none",
        }
    }

    pub fn provenance(self) -> Option<Provenance> {
        match self {
            AugmentKind::Perturb => Some(Provenance::SyntheticPerturb),
            AugmentKind::Traverse => Some(Provenance::SyntheticTraverse),
            AugmentKind::Affine => Some(Provenance::Affine),
            AugmentKind::None => None,
        }
    }

    /// Whether the policy needs projected latents.
    pub fn needs_latents(self) -> bool {
        matches!(self, AugmentKind::Perturb | AugmentKind::Traverse)
    }
}

impl std::fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturb" => Ok(AugmentKind::Perturb),
            "traverse" => Ok(AugmentKind::Traverse),
            "affine" => Ok(AugmentKind::Affine),
            "none" => Ok(AugmentKind::None),
            _ => Err(Error::param("kind", format!("unknown augmentation `{s}`"))),
        }
    }
}

/// Magnitudes of the baseline transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffineConfig {
    pub max_rotation_deg: f64,
    pub max_shear_deg: f64,
    pub noise_std: f64,
}

impl Default for AffineConfig {
    fn default() -> Self {
        AffineConfig {
            max_rotation_deg: 15.0,
            max_shear_deg: 10.0,
            noise_std: 0.02,
        }
    }
}

impl AffineConfig {
    pub fn identity() -> Self {
        AffineConfig {
            max_rotation_deg: 0.0,
            max_shear_deg: 0.0,
            noise_std: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    /// Perturbation std in units of the per-dimension W std.
    pub sigma: f64,
    /// Traversal coefficients in degrees (converted with the direction's
    /// calibration).
    pub coefficients: Vec<f64>,
    /// Synthetic images per retained real image.
    pub k: usize,
    pub affine: AffineConfig,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            kind: AugmentKind::Perturb,
            sigma: 0.3,
            coefficients: vec![-30.0, -20.0, 20.0, 30.0],
            k: 2,
            affine: AffineConfig::default(),
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy {
            kind: AugmentKind::None,
            ..Default::default()
        }
    }

    pub fn of_kind(kind: AugmentKind) -> Self {
        AugmentPolicy { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::param("sigma", "must be finite and non-negative"));
        }
        if self.kind == AugmentKind::Traverse && self.coefficients.is_empty() {
            return Err(Error::param("coefficients", "traversal needs at least one coefficient"));
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("coefficients", "must be finite"));
        }
        let a = &self.affine;
        if [a.max_rotation_deg, a.max_shear_deg, a.noise_std].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("affine", "magnitudes must be finite and non-negative"));
        }
        Ok(())
    }

    /// Seed of the `j`-th synthetic image derived from `source_id`.
    pub fn item_seed(&self, source_id: &str, j: usize) -> u64 {
        seed::derive_index(seed::derive(self.seed, source_id), self.kind.name(), j as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixSpec {
    pub real_fraction: f64,
    pub policy: AugmentPolicy,
    pub stratified: bool,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            real_fraction: 1.0,
            policy: AugmentPolicy::none(),
            stratified: true,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.real_fraction > 0.0 && self.real_fraction <= 1.0) {
            return Err(Error::param("real_fraction", format!("{} not in (0, 1]", self.real_fraction)));
        }
        self.policy.validate()
    }
}

/// `w + ε`, `ε ~ N(0, (σ·sᵢ)²)` with `sᵢ` the per-dimension W std (W+
/// latents use the same scale in every block).
pub fn perturb(w: &LatentW, stats: &WStats, sigma: f64, seed_: u64) -> Result<LatentW> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::param("sigma", "must be finite and non-negative"));
    }
    let mut out = w.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed_);
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += (z * sigma * f64::from(stats.std[i % W_DIM])) as f32;
    }
    Ok(out)
}

/// Generator, latent statistics and (for traversal) a calibrated direction.
#[derive(Clone, Copy, Debug)]
pub struct Synthesizer<'a> {
    pub bundle: &'a GanBundle,
    pub stats: &'a WStats,
    pub direction: Option<&'a DirectionVector>,
}

impl Synthesizer<'_> {
    /// The `k` latents a policy derives from one projected latent.
    pub fn latents(&self, w: &LatentW, source_id: &str, policy: &AugmentPolicy) -> Result<Vec<LatentW>> {
        match policy.kind {
            AugmentKind::Perturb => (0..policy.k)
                .map(|j| perturb(w, self.stats, policy.sigma, policy.item_seed(source_id, j)))
                .collect(),
            AugmentKind::Traverse => {
                let d = self
                    .direction
                    .ok_or_else(|| Error::param("direction", "traversal needs a direction"))?;
                let dpu = d
                    .degrees_per_unit
                    .filter(|v| v.is_finite() && *v != 0.0)
                    .ok_or_else(|| Error::param("direction", "direction has not been calibrated"))?;
                Ok((0..policy.k)
                    .map(|j| traverse(w, d, policy.coefficients[j % policy.coefficients.len()] / dpu))
                    .collect())
            }
            _ => Err(Error::param("kind", format!("`{}` does not use latents", policy.kind))),
        }
    }

    /// Reconstructions of `k` perturbed or traversed copies of `w`.
    pub fn synth_from_latent(
        &self,
        exec: Exec,
        w: &LatentW,
        source_id: &str,
        policy: &AugmentPolicy,
    ) -> Result<Vec<Image>> {
        policy.validate()?;
        if policy.k == 0 {
            return Ok(Vec::new());
        }
        let ws = self.latents(w, source_id, policy)?;
        self.bundle.render_images(exec, &ws)
    }

    /// Projects `image` once, then emits `k` reconstructions.
    pub fn synth_from_real(
        &self,
        exec: Exec,
        image: &Image,
        source_id: &str,
        projection: &ProjectionConfig,
        policy: &AugmentPolicy,
    ) -> Result<Vec<Image>> {
        policy.validate()?;
        if !policy.kind.needs_latents() {
            return Err(Error::param("kind", "synthesis from a real image needs perturb or traverse"));
        }
        if policy.k == 0 {
            return Ok(Vec::new());
        }
        let cfg = ProjectionConfig {
            seed: seed::derive(projection.seed, source_id),
            ..projection.clone()
        };
        let res = project(image, self.bundle, self.stats, &cfg)
            .map_err(|e| Error::param(format!("projection of `{source_id}`"), e.to_string()))?;
        self.synth_from_latent(exec, &res.w_star, source_id, policy)
    }
}

fn bilinear(img: &Image, y: f64, x: f64, c: usize) -> f32 {
    let (h, w) = (img.height as f64, img.width as f64);
    let y = y.clamp(0.0, h - 1.0);
    let x = x.clamp(0.0, w - 1.0);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(img.height - 1), (x0 + 1).min(img.width - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    if fy == 0.0 && fx == 0.0 {
        return img.at(y0, x0, c);
    }
    let top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
    let bottom = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotation by `rot_deg` and horizontal shear by `shear_deg` about the image
/// centre, edge pixels replicated.
pub fn warp(img: &Image, rot_deg: f64, shear_deg: f64) -> Image {
    let (sin, cos) = rot_deg.to_radians().sin_cos();
    let sh = shear_deg.to_radians().tan();
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let mut out = Image::new(img.height, img.width, img.channels);
    for y in 0..img.height {
        for x in 0..img.width {
            // Inverse map: undo the shear, then the rotation.
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let dx = dx - sh * dy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            for c in 0..img.channels {
                out.set(y, x, c, bilinear(img, sy, sx, c));
            }
        }
    }
    out
}

/// `k` randomly rotated, sheared and noised copies, clamped to `[0, 1]`.
pub fn affine_augment(image: &Image, policy: &AugmentPolicy, source_id: &str) -> Result<Vec<Image>> {
    policy.validate()?;
    let a = &policy.affine;
    Ok((0..policy.k)
        .map(|j| {
            let mut rng = seed::rng(policy.item_seed(source_id, j));
            let rot = a.max_rotation_deg * rng.random_range(-1.0..=1.0);
            let shear = a.max_shear_deg * rng.random_range(-1.0..=1.0);
            let mut out = warp(image, rot, shear);
            if a.noise_std > 0.0 {
                for v in &mut out.data {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += (z * a.noise_std) as f32;
                }
            }
            out.clamp01();
            out
        })
        .collect())
}

/// Indices kept per class (or overall when not stratified), in input order.
pub fn subsample_real(manifest: &DatasetManifest, fraction: f64, stratified: bool, seed_: u64) -> Result<Vec<usize>> {
    let take = |n: usize| ((fraction * n as f64) + 1e-9).floor() as usize;
    let mut keep = Vec::new();
    if stratified {
        let classes = manifest.class_indices()?;
        for (ci, label) in manifest.meta.labels.iter().enumerate() {
            let mut idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == ci).collect();
            if idx.is_empty() {
                continue;
            }
            let m = take(idx.len());
            if m == 0 {
                return Err(Error::Empty(format!(
                    "real fraction {fraction} leaves no samples of class `{label}` ({} available)",
                    idx.len()
                )));
            }
            idx.shuffle(&mut seed::rng(seed::derive(seed_, label)));
            keep.extend_from_slice(&idx[..m]);
        }
    } else {
        let mut idx: Vec<usize> = (0..manifest.len()).collect();
        let m = take(idx.len());
        if m == 0 {
            return Err(Error::Empty(format!("real fraction {fraction} leaves no samples")));
        }
        idx.shuffle(&mut seed::rng(seed::derive(seed_, "all")));
        keep.extend_from_slice(&idx[..m]);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Subsamples the real training records and appends `k` synthetic images per
/// retained record. Synthetic records carry their source's label and id.
pub fn build_mix(
    exec: Exec,
    target: &Dataset,
    spec: &MixSpec,
    latents: &[LatentRecord],
    synth: Option<&Synthesizer<'_>>,
) -> Result<Dataset> {
    spec.validate()?;
    let policy = &spec.policy;
    let keep = subsample_real(&target.manifest, spec.real_fraction, spec.stratified, seed::derive(policy.seed, "subsample"))?;
    let mut out = target.select(&keep);
    let Some(prov) = policy.kind.provenance().filter(|_| policy.k > 0) else {
        return Ok(out);
    };
    let reals = out.manifest.records.clone();
    let images: Vec<Vec<Image>> = if policy.kind.needs_latents() {
        let synth = synth.ok_or_else(|| Error::param("synthesizer", format!("`{}` needs a generator", policy.kind)))?;
        let table: HashMap<&str, &LatentRecord> = latents.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        let mut ws = Vec::with_capacity(reals.len() * policy.k);
        for r in &reals {
            let rec = table
                .get(r.id.as_str())
                .ok_or_else(|| Error::param("latents", format!("no projection for `{}`", r.id)))?;
            ws.extend(synth.latents(&rec.latent()?, &r.id, policy)?);
        }
        let rendered = synth.bundle.render_images(exec, &ws)?;
        rendered.chunks(policy.k).map(<[Image]>::to_vec).collect()
    } else {
        let pairs: Vec<(&Record, &Image)> = reals.iter().zip(&out.images).collect();
        par::map_slice(exec, &pairs, |(r, img)| affine_augment(img, policy, &r.id))
            .into_iter()
            .collect::<Result<_>>()?
    };
    for (r, imgs) in reals.iter().zip(images) {
        for (j, img) in imgs.into_iter().enumerate() {
            let id = format!("{}~{}{j}", r.id, policy.kind.name());
            out.manifest.records.push(Record {
                path: format!("images/{id}.png"),
                id,
                label: r.label.clone(),
                pose_deg: None,
                provenance: prov,
                seed: policy.item_seed(&r.id, j),
                source: Some(r.id.clone()),
                scene: None,
            });
            out.images.push(img);
        }
    }
    Ok(out)
}

/// Counts of real and synthetic records.
pub fn mix_counts(manifest: &DatasetManifest) -> (usize, usize) {
    let synth = manifest.records.iter().filter(|r| r.provenance.is_synthetic()).count();
    (manifest.len() - synth, synth)
}
