use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use log::warn;

use super::{Dataset, DatasetManifest, ManifestMeta, Provenance, Record};
use crate::error::{Error, Result};
use crate::image::{Image, SIZE};

/// Where labels for imported images come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelRule {
    /// Name of the immediate subdirectory holding the file; files directly in
    /// the root are unlabeled.
    Subdirectory,
    /// JSON object in the root mapping relative file paths to labels.
    Sidecar(PathBuf),
    Unlabeled,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Resizes the shorter side to 32 pixels and centre-crops to 32×32.
pub fn fit_square(img: &image::DynamicImage) -> Image {
    let (w, h) = (img.width().max(1), img.height().max(1));
    let s = SIZE as f64 / f64::from(w.min(h));
    let nw = ((f64::from(w) * s).round() as u32).max(SIZE as u32);
    let nh = ((f64::from(h) * s).round() as u32).max(SIZE as u32);
    let resized = img.resize_exact(nw, nh, FilterType::Triangle).to_rgb8();
    let x0 = (nw - SIZE as u32) / 2;
    let y0 = (nh - SIZE as u32) / 2;
    let cropped = image::imageops::crop_imm(&resized, x0, y0, SIZE as u32, SIZE as u32).to_image();
    Image::from_rgb8(&cropped)
}

/// Imports every decodable image below `root` as a real record. Undecodable
/// files are skipped with a warning.
pub fn import_folder(root: &Path, rule: &LabelRule) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let sidecar: Option<BTreeMap<String, String>> = match rule {
        LabelRule::Sidecar(name) => {
            let p = root.join(name);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Some(serde_json::from_slice(&bytes)?)
        }
        _ => None,
    };
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut labels = BTreeSet::new();
    for path in files {
        let rel = path.strip_prefix(root).unwrap_or(&path);
        let rel_str = rel.to_string_lossy().replace('\\', "/");
        if let LabelRule::Sidecar(name) = rule {
            if rel == name.as_path() {
                continue;
            }
        }
        let decoded = match image::open(&path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let label = match rule {
            LabelRule::Subdirectory => {
                let comps: Vec<_> = rel.components().collect();
                (comps.len() >= 2).then(|| comps[0].as_os_str().to_string_lossy().into_owned())
            }
            LabelRule::Sidecar(_) => sidecar.as_ref().and_then(|m| m.get(&rel_str).cloned()),
            LabelRule::Unlabeled => None,
        };
        if let Some(l) = &label {
            labels.insert(l.clone());
        }
        records.push(Record {
            id: format!("imp-{:06}", records.len()),
            path: path.to_string_lossy().into_owned(),
            label,
            pose_deg: None,
            provenance: Provenance::Real,
            seed: 0,
            source: None,
            scene: None,
        });
        images.push(fit_square(&decoded));
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("no images found in {}", root.display())));
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            meta: ManifestMeta {
                kind: "imported".into(),
                labels: labels.into_iter().collect(),
                seed: 0,
                split: None,
            },
            records,
        },
        images,
    })
}
