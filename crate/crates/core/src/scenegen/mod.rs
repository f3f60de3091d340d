//! Procedural car-silhouette world.
//!
//! The source world (templates 0–7, unlabeled) trains the generator; the
//! target world (templates 2–11, ten labelled fine-grained classes) is what
//! the downstream classifier must learn, including four classes the
//! generator never saw. Every record keeps its yaw so a pose regressor can be
//! trained on the same renders.

mod import;
mod manifest;
mod render;
pub mod templates;

use std::path::Path;

use rand::Rng;

pub use import::{import_folder, LabelRule};
pub use manifest::{meta_path, DatasetManifest, ManifestMeta, Provenance, Record};
pub use render::{
    background, background_image, render, render_with_mask, silhouette, RenderedSample, SceneParams,
    NUM_BACKGROUNDS, SHEAR, YAW_LIMIT,
};
use templates::{SOURCE_TEMPLATES, TARGET_TEMPLATES};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::par::{self, Exec};
use crate::seed;

/// Manifest plus decoded images, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<Image>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Foreground mask of a rendered record (re-rendered from its scene).
    pub fn mask(&self, index: usize) -> Option<Mask> {
        let scene = self.manifest.records[index].scene?;
        render_with_mask(&scene).ok().map(|s| s.mask)
    }

    /// Subset by record indices, preserving order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            manifest: DatasetManifest {
                meta: self.manifest.meta.clone(),
                records: indices.iter().map(|&i| self.manifest.records[i].clone()).collect(),
            },
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    /// Writes images (and masks for rendered records) under `dir` and the
    /// manifest as `dir/manifest.jsonl`. Record paths are relative to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let img_dir = dir.join("images");
        std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut manifest = self.manifest.clone();
        for (i, rec) in manifest.records.iter_mut().enumerate() {
            rec.path = format!("images/{}.png", rec.id);
            self.images[i].save_png(&dir.join(&rec.path))?;
            if let Some(mask) = self.mask(i) {
                mask.save_png(&img_dir.join(format!("{}.mask.png", rec.id)))?;
            }
        }
        manifest.save(&dir.join("manifest.jsonl"))
    }

    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let images = manifest
            .records
            .iter()
            .map(|r| Image::load_png(&base.join(&r.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, images })
    }
}

pub fn label_name(template_id: u8) -> String {
    format!("model-{template_id:02}")
}

pub fn target_labels() -> Vec<String> {
    TARGET_TEMPLATES.map(label_name).collect()
}

/// Draws scene parameters with everything but the template uniform.
pub fn random_params<R: Rng>(template_id: u8, jitter_seed: u64, rng: &mut R) -> SceneParams {
    SceneParams {
        template_id,
        yaw_deg: rng.random_range(-YAW_LIMIT..=YAW_LIMIT),
        scale: rng.random_range(0.6..=1.0),
        body_color: [rng.random(), rng.random(), rng.random()],
        background_id: rng.random_range(0..NUM_BACKGROUNDS),
        jitter_seed,
    }
}

fn render_records(exec: Exec, records: &[Record]) -> Result<Vec<Image>> {
    par::map_slice(exec, records, |r| render(r.scene.as_ref().expect("rendered record")))
        .into_iter()
        .collect()
}

/// `n` unlabeled renders of templates 0–7 (8–11 are excluded from this world).
pub fn make_source_dataset(n: usize, seed_: u64) -> Result<Dataset> {
    make_source_dataset_with(Exec::default(), n, seed_)
}

pub fn make_source_dataset_with(exec: Exec, n: usize, seed_: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let records: Vec<Record> = (0..n)
        .map(|i| {
            let s = seed::derive_index(seed_, "source", i as u64);
            let mut rng = seed::rng(s);
            let tpl = rng.random_range(SOURCE_TEMPLATES);
            let params = random_params(tpl, s, &mut rng);
            Record {
                id: format!("src-{i:06}"),
                path: format!("images/src-{i:06}.png"),
                label: None,
                pose_deg: Some(params.yaw_deg),
                provenance: Provenance::Real,
                seed: s,
                source: None,
                scene: Some(params),
            }
        })
        .collect();
    let images = render_records(exec, &records)?;
    Ok(Dataset {
        manifest: DatasetManifest {
            meta: ManifestMeta {
                kind: "source".into(),
                labels: Vec::new(),
                seed: seed_,
                split: None,
            },
            records,
        },
        images,
    })
}

/// Ten labelled classes (templates 2–11), `n_per_class` renders each,
/// ordered class by class.
pub fn make_target_dataset(n_per_class: usize, seed_: u64) -> Result<Dataset> {
    if n_per_class < 10 {
        return Err(Error::param("n_per_class", "must be at least 10"));
    }
    let mut records = Vec::with_capacity(10 * n_per_class);
    for tpl in TARGET_TEMPLATES {
        for i in 0..n_per_class {
            let s = seed::derive_index(seed_, &format!("target-{tpl}"), i as u64);
            let mut rng = seed::rng(s);
            let params = random_params(tpl, s, &mut rng);
            let id = format!("t{tpl:02}-{i:05}");
            records.push(Record {
                path: format!("images/{id}.png"),
                id,
                label: Some(label_name(tpl)),
                pose_deg: Some(params.yaw_deg),
                provenance: Provenance::Real,
                seed: s,
                source: None,
                scene: Some(params),
            });
        }
    }
    let images = render_records(Exec::default(), &records)?;
    Ok(Dataset {
        manifest: DatasetManifest {
            meta: ManifestMeta {
                kind: "target".into(),
                labels: target_labels(),
                seed: seed_,
                split: None,
            },
            records,
        },
        images,
    })
}

/// Renders of all twelve templates with pose labels, for training the pose
/// regressor.
pub fn make_pose_dataset(n: usize, seed_: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let records: Vec<Record> = (0..n)
        .map(|i| {
            let s = seed::derive_index(seed_, "pose", i as u64);
            let mut rng = seed::rng(s);
            let tpl = rng.random_range(0..templates::NUM_TEMPLATES as u8);
            let params = random_params(tpl, s, &mut rng);
            Record {
                id: format!("pose-{i:06}"),
                path: format!("images/pose-{i:06}.png"),
                label: None,
                pose_deg: Some(params.yaw_deg),
                provenance: Provenance::Real,
                seed: s,
                source: None,
                scene: Some(params),
            }
        })
        .collect();
    let images = render_records(Exec::default(), &records)?;
    Ok(Dataset {
        manifest: DatasetManifest {
            meta: ManifestMeta {
                kind: "pose".into(),
                labels: Vec::new(),
                seed: seed_,
                split: None,
            },
            records,
        },
        images,
    })
}
