//! Stage bodies and the JSON artifacts they exchange.

use std::path::Path;

use dapper_core::augmenter::{build_mix, AugmentPolicy, MixSpec, Synthesizer};
use dapper_core::evalhost::{
    mean_std, reduction_sweep, run_single_fold, train_classifier, ClassifierBundle, ClassifierConfig, CvContext,
    SweepReport,
};
use dapper_core::image::{grid, Image};
use dapper_core::inversion::{
    batch_project, load_latent_table, mean_image_baseline, model_mse, LatentRecord, ProjectionConfig,
};
use dapper_core::saliency::{gradcam_batch, on_object_fraction, overlay};
use dapper_core::scenegen::{make_pose_dataset, make_source_dataset_with, make_target_dataset, Dataset};
use dapper_core::semdir::{
    calibrated_coefficients, discover_direction, identity_preservation, monotone_fraction, pose_sweep,
    sweep_strip, train_pose_oracle, DirectionVector, DiscoveryConfig, FilterReport, OracleConfig, OracleReport,
    UNIT_DEG,
};
use dapper_core::stylegan::{GanBundle, GanConfig, LatentW, WStats, MIN_STATS_SAMPLES};
use dapper_core::{seed, Error, Result};
use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ledger::{hash_file, sha256_hex};
use crate::pipeline::{ensure_parent, Artifact, Pipeline, Stage};
use crate::report;

pub fn gan_config(p: &Pipeline) -> GanConfig {
    GanConfig {
        seed: p.stage_seed(Stage::TrainGan),
        ..p.cfg.gan.clone()
    }
}

pub fn projection_config(p: &Pipeline) -> ProjectionConfig {
    ProjectionConfig {
        seed: p.stage_seed(Stage::Project),
        ..p.cfg.projection.clone()
    }
}

/// Seed of the `r`-th sweep repeat. Grad-CAM reuses repeat 0.
pub fn repeat_seed(p: &Pipeline, r: usize) -> u64 {
    seed::derive_index(p.stage_seed(Stage::Sweep), "repeat", r as u64)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(v)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn save_png(path: &Path, img: &Image) -> Result<()> {
    ensure_parent(path)?;
    img.save_png(path)
}

/// Replaces the dataset folder holding `manifest`.
fn save_dataset(data: &Dataset, manifest: &Path) -> Result<()> {
    let dir = manifest.parent().expect("manifest lives in a folder");
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    data.save(dir)
}

pub fn load_gan(p: &Pipeline) -> Result<GanBundle> {
    Ok(GanBundle::load(&p.path(Artifact::Generator))?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub projected: usize,
    pub failed: Vec<(String, String)>,
    pub mean_mse: f64,
    pub median_mse: f64,
    /// Mean MSE of the target images against the dataset mean image.
    pub baseline_mean_mse: f64,
    /// Fraction of images reconstructed below their mean-image MSE.
    pub beats_baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub oracle: OracleReport,
    pub filter: FilterReport,
    pub probe_r2: f64,
    pub probe_lambda: f64,
    pub kept_dims: usize,
    pub degrees_per_unit: f64,
    pub reference_train_accuracy: f64,
    pub eval_latents: usize,
    pub sweep_degrees: Vec<f64>,
    pub sweep_coefficients: Vec<f64>,
    pub monotone_fraction: f64,
    pub identity_units: f64,
    pub identity_preservation: f64,
    /// Oracle pose per evaluation latent (rows) and sweep step (columns).
    pub poses: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub fraction: f64,
    pub policy: String,
    /// Mean over repeats of the k-fold mean accuracy.
    pub mean: Option<f64>,
    /// Standard deviation of the repeat means.
    pub std: Option<f64>,
    pub repeat_means: Vec<Option<f64>>,
    pub n_real: usize,
    pub n_synth: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub repeats: usize,
    pub folds: usize,
    pub fractions: Vec<f64>,
    pub policies: Vec<String>,
    pub cells: Vec<AggregateCell>,
}

impl SweepSummary {
    pub fn cell(&self, fraction: f64, policy: &str) -> Option<&AggregateCell> {
        self.cells
            .iter()
            .find(|c| (c.fraction - fraction).abs() < 1e-9 && c.policy == policy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcamSummary {
    pub fold: usize,
    pub real_fraction: f64,
    pub policy: String,
    pub n: usize,
    pub raw_accuracy: f64,
    pub aug_accuracy: f64,
    pub raw_on_object: f64,
    pub aug_on_object: f64,
    /// `aug_on_object − raw_on_object`.
    pub delta: f64,
}

#[derive(Debug, Serialize)]
struct SweepCsvRow<'a> {
    repeat: usize,
    fraction: f64,
    policy: &'a str,
    fold: usize,
    accuracy: Option<f64>,
    n_real: usize,
    n_synth: usize,
}

#[derive(Debug, Serialize)]
struct GradcamCsvRow<'a> {
    id: &'a str,
    label: &'a str,
    raw_pred: &'a str,
    aug_pred: &'a str,
    raw_on_object: Option<f64>,
    aug_on_object: Option<f64>,
}

pub(crate) fn execute(p: &Pipeline, stage: Stage) -> Result<()> {
    match stage {
        Stage::Render => render(p),
        Stage::TrainGan => train(p),
        Stage::Project => project(p),
        Stage::DiscoverDirection => discover(p),
        Stage::Augment => augment(p),
        Stage::Sweep => sweep(p),
        Stage::Gradcam => gradcam(p),
        Stage::Report => report::report(p),
    }
}

fn render(p: &Pipeline) -> Result<()> {
    let s = p.stage_seed(Stage::Render);
    let c = &p.cfg.scenegen;
    let source = make_source_dataset_with(p.exec, c.source_images, seed::derive(s, "source"))?;
    save_dataset(&source, &p.path(Artifact::SourceManifest))?;
    drop(source);
    let target = make_target_dataset(c.n_per_class, seed::derive(s, "target"))?;
    save_dataset(&target, &p.path(Artifact::TargetManifest))?;
    let pose = make_pose_dataset(c.pose_renders, seed::derive(s, "pose"))?;
    save_dataset(&pose, &p.path(Artifact::PoseManifest))
}

fn train(p: &Pipeline) -> Result<()> {
    let s = p.stage_seed(Stage::TrainGan);
    let source = Dataset::load(&p.path(Artifact::SourceManifest))?;
    let cfg = gan_config(p);
    let outcome = dapper_core::stylegan::train_gan(&source, &cfg)?;
    let bundle = outcome.bundle;
    let path = p.path(Artifact::Generator);
    ensure_parent(&path)?;
    bundle.save(&path, &json!({ "config": cfg }))?;
    write_json(&p.path(Artifact::GanLog), &outcome.log)?;
    let stats = bundle.estimate_w_stats(MIN_STATS_SAMPLES, seed::derive(s, "w-stats"))?;
    write_json(&p.path(Artifact::WStats), &stats)?;
    let (_, samples) = bundle.sample(p.exec, 16, seed::derive(s, "samples"))?;
    let rows: Vec<Vec<Image>> = samples.chunks(4).map(<[Image]>::to_vec).collect();
    save_png(&p.path(Artifact::GanSamples), &grid(&rows))
}

fn project(p: &Pipeline) -> Result<()> {
    let bundle = load_gan(p)?;
    let stats: WStats = read_json(&p.path(Artifact::WStats))?;
    let cfg = projection_config(p);
    let manifest = p.path(Artifact::TargetManifest);
    let table = p.path(Artifact::Latents);
    // An interrupted run resumes from the partial table only if nothing it
    // depends on has changed.
    let partial = table.with_extension("partial.jsonl");
    let key_path = table.with_extension("partial.key");
    let key = sha256_hex(
        [
            p.config_hash(Stage::Project),
            hash_file(&manifest)?,
            hash_file(&p.path(Artifact::Generator))?,
            hash_file(&p.path(Artifact::WStats))?,
        ]
        .concat()
        .as_bytes(),
    );
    let resumable = std::fs::read_to_string(&key_path).is_ok_and(|k| k == key);
    if !resumable {
        for f in [&partial, &table] {
            if f.exists() {
                std::fs::remove_file(f).map_err(|e| Error::io(f, e))?;
            }
        }
        ensure_parent(&key_path)?;
        std::fs::write(&key_path, &key).map_err(|e| Error::io(&key_path, e))?;
    }
    let rep = batch_project(p.exec, &manifest, &partial, &bundle, &stats, &cfg)?;
    log::info!("projected {}, resumed past {}, failed {}", rep.projected, rep.skipped, rep.failed.len());
    std::fs::rename(&partial, &table).map_err(|e| Error::io(&table, e))?;
    std::fs::remove_file(&key_path).map_err(|e| Error::io(&key_path, e))?;

    let target = Dataset::load(&manifest)?;
    let records = load_latent_table(&table)?;
    let mean = mean_image_baseline(&target.images)?;
    let by_id: std::collections::HashMap<&str, &Image> = target
        .manifest
        .records
        .iter()
        .zip(&target.images)
        .map(|(r, img)| (r.id.as_str(), img))
        .collect();
    let mut mses: Vec<f64> = records.iter().map(|r| r.final_mse).collect();
    let baseline: Vec<f64> = target.images.iter().map(|img| model_mse(img, &mean)).collect();
    let beats = records
        .iter()
        .filter(|r| by_id.get(r.sample_id.as_str()).is_some_and(|img| r.final_mse < model_mse(img, &mean)))
        .count();
    let n = records.len().max(1) as f64;
    let summary = ProjectionSummary {
        projected: records.len(),
        failed: rep.failed,
        mean_mse: mses.iter().sum::<f64>() / n,
        median_mse: dapper_core::semdir::median(&mut mses),
        baseline_mean_mse: baseline.iter().sum::<f64>() / baseline.len().max(1) as f64,
        beats_baseline: beats as f64 / n,
    };
    write_json(&p.path(Artifact::ProjectionSummary), &summary)
}

/// Traversal coefficients (W units) for pose changes given in degrees.
pub fn degree_coefficients(d: &DirectionVector, degrees: &[f64]) -> Result<Vec<f64>> {
    let units: Vec<f64> = degrees.iter().map(|g| g / UNIT_DEG).collect();
    calibrated_coefficients(d, &units)
}

/// The projected target latents used for evaluation and strips: a seeded
/// shuffle of the table, truncated to `direction.eval_latents`.
pub fn eval_latents(p: &Pipeline, table: &[LatentRecord]) -> Result<Vec<LatentW>> {
    if table.is_empty() {
        return Err(Error::Empty("latent table is empty".into()));
    }
    let mut idx: Vec<usize> = (0..table.len()).collect();
    idx.shuffle(&mut seed::rng(seed::derive(p.stage_seed(Stage::DiscoverDirection), "eval")));
    idx.truncate(p.cfg.direction.eval_latents);
    idx.iter().map(|&i| table[i].latent()).collect()
}

fn discover(p: &Pipeline) -> Result<()> {
    let s = p.stage_seed(Stage::DiscoverDirection);
    let dcfg = &p.cfg.direction;
    let bundle = load_gan(p)?;
    let (oracle, oracle_report) = {
        let pose = Dataset::load(&p.path(Artifact::PoseManifest))?;
        let cfg = OracleConfig {
            seed: seed::derive(s, "oracle"),
            ..dcfg.oracle.clone()
        };
        train_pose_oracle(p.exec, &pose, &cfg)?
    };
    log::info!("pose oracle validation MAE {:.2}°", oracle_report.val_mae);
    let path = p.path(Artifact::Oracle);
    ensure_parent(&path)?;
    oracle.save(&path, &oracle_report)?;
    let cfg = DiscoveryConfig {
        seed: seed::derive(s, "discovery"),
        ..dcfg.discovery.clone()
    };
    let disc = discover_direction(p.exec, &bundle, &oracle, &cfg)?;
    let d = &disc.direction;
    d.save(&p.path(Artifact::Direction))?;

    let target = Dataset::load(&p.path(Artifact::TargetManifest))?;
    let reference = train_classifier(
        &target,
        &ClassifierConfig {
            seed: seed::derive(s, "reference"),
            ..p.cfg.classifier.clone()
        },
    )?;
    reference.save(&p.path(Artifact::Reference))?;

    let table = load_latent_table(&p.path(Artifact::Latents))?;
    let latents = eval_latents(p, &table)?;
    let coefs = degree_coefficients(d, &dcfg.sweep_degrees)?;
    let poses = pose_sweep(p.exec, &bundle, &oracle, d, &latents, &coefs)?;
    let identity = identity_preservation(p.exec, &bundle, d, &latents, dcfg.identity_units, |imgs| {
        reference.predict(p.exec, imgs)
    })?;
    let shown = &latents[..latents.len().min(p.cfg.report.strip_latents)];
    save_png(&p.path(Artifact::DirectionStrip), &sweep_strip(p.exec, &bundle, d, shown, &coefs)?)?;
    let metrics = DirectionMetrics {
        oracle: oracle_report,
        filter: disc.filter.clone(),
        probe_r2: disc.probe.r2,
        probe_lambda: disc.probe.lambda,
        kept_dims: d.kept(),
        degrees_per_unit: d.degrees_per_unit.unwrap_or(f64::NAN),
        reference_train_accuracy: reference.history.last().map_or(0.0, |h| h.accuracy),
        eval_latents: latents.len(),
        sweep_degrees: dcfg.sweep_degrees.clone(),
        sweep_coefficients: coefs,
        monotone_fraction: monotone_fraction(&poses, true),
        identity_units: dcfg.identity_units,
        identity_preservation: identity,
        poses,
    };
    log::info!(
        "monotone {:.2}, identity kept {:.2}",
        metrics.monotone_fraction,
        metrics.identity_preservation
    );
    write_json(&p.path(Artifact::DirectionMetrics), &metrics)
}

/// Everything the augmentation-dependent stages load.
struct AugInputs {
    target: Dataset,
    table: Vec<LatentRecord>,
    bundle: GanBundle,
    stats: WStats,
    direction: DirectionVector,
}

fn aug_inputs(p: &Pipeline) -> Result<AugInputs> {
    Ok(AugInputs {
        target: Dataset::load(&p.path(Artifact::TargetManifest))?,
        table: load_latent_table(&p.path(Artifact::Latents))?,
        bundle: load_gan(p)?,
        stats: read_json(&p.path(Artifact::WStats))?,
        direction: DirectionVector::load(&p.path(Artifact::Direction))?,
    })
}

impl AugInputs {
    fn synth(&self) -> Synthesizer<'_> {
        Synthesizer {
            bundle: &self.bundle,
            stats: &self.stats,
            direction: Some(&self.direction),
        }
    }
}

fn augment(p: &Pipeline) -> Result<()> {
    let inp = aug_inputs(p)?;
    let aug = &p.cfg.augmentation;
    let spec = MixSpec {
        policy: AugmentPolicy {
            seed: p.stage_seed(Stage::Augment),
            ..aug.policy.clone()
        },
        ..aug.clone()
    };
    let mixed = build_mix(p.exec, &inp.target, &spec, &inp.table, Some(&inp.synth()))?;
    let (real, synth) = dapper_core::augmenter::mix_counts(&mixed.manifest);
    log::info!("augmented set: {real} real, {synth} synthetic");
    save_dataset(&mixed, &p.path(Artifact::AugmentedManifest))
}

fn sweep(p: &Pipeline) -> Result<()> {
    let inp = aug_inputs(p)?;
    let sw = &p.cfg.sweep;
    let policies: Vec<AugmentPolicy> = sw.policies.iter().map(|&k| p.cfg.policy(k)).collect();
    let synth = inp.synth();
    let mut reports = Vec::with_capacity(sw.repeats);
    for r in 0..sw.repeats {
        let ctx = CvContext {
            exec: p.exec,
            latents: &inp.table,
            synth: Some(&synth),
            classifier: &p.cfg.classifier,
            k: sw.folds,
            seed: repeat_seed(p, r),
        };
        log::info!("sweep repeat {}/{}", r + 1, sw.repeats);
        let report = reduction_sweep(&ctx, &inp.target, &sw.fractions, &policies)?;
        report.save(&p.out.join(format!("sweep/repeat-{r}")))?;
        reports.push(report);
    }
    let summary = aggregate(&reports, sw.folds);
    write_json(&p.path(Artifact::SweepSummary), &summary)?;

    let path = p.path(Artifact::SweepCsv);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for (r, rep) in reports.iter().enumerate() {
        for row in &rep.rows {
            w.serialize(SweepCsvRow {
                repeat: r,
                fraction: row.fraction,
                policy: &row.policy,
                fold: row.fold,
                accuracy: row.accuracy,
                n_real: row.n_real,
                n_synth: row.n_synth,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Per-cell means over repeats.
pub fn aggregate(reports: &[SweepReport], folds: usize) -> SweepSummary {
    let first = &reports[0];
    let cells = first
        .cells
        .iter()
        .map(|c0| {
            let cells: Vec<_> = reports.iter().map(|r| r.cell(c0.fraction, &c0.policy)).collect();
            let repeat_means: Vec<Option<f64>> = cells.iter().map(|c| c.and_then(|c| c.mean)).collect();
            let error = cells.iter().flatten().find_map(|c| c.error.clone());
            let all: Option<Vec<f64>> = repeat_means.iter().copied().collect();
            let (mean, std) = match all {
                Some(v) if !v.is_empty() => {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                }
                _ => (None, None),
            };
            let row = first
                .rows
                .iter()
                .find(|r| r.fraction == c0.fraction && r.policy == c0.policy);
            AggregateCell {
                fraction: c0.fraction,
                policy: c0.policy.clone(),
                mean,
                std,
                repeat_means,
                n_real: row.map_or(0, |r| r.n_real),
                n_synth: row.map_or(0, |r| r.n_synth),
                error,
            }
        })
        .collect();
    let mut policies: Vec<String> = Vec::new();
    for c in &first.cells {
        if !policies.contains(&c.policy) {
            policies.push(c.policy.clone());
        }
    }
    SweepSummary {
        repeats: reports.len(),
        folds,
        fractions: first.config.fractions.clone(),
        policies,
        cells,
    }
}

fn gradcam(p: &Pipeline) -> Result<()> {
    let inp = aug_inputs(p)?;
    let g = &p.cfg.gradcam;
    let synth = inp.synth();
    let ctx = CvContext {
        exec: p.exec,
        latents: &inp.table,
        synth: Some(&synth),
        classifier: &p.cfg.classifier,
        k: p.cfg.sweep.folds,
        seed: repeat_seed(p, 0),
    };
    let spec = |policy| MixSpec {
        real_fraction: g.real_fraction,
        policy,
        stratified: p.cfg.augmentation.stratified,
    };
    let (raw_res, raw, test_idx) = run_single_fold(&ctx, &inp.target, &spec(AugmentPolicy::none()), g.fold)?;
    let (aug_res, aug, _) = run_single_fold(&ctx, &inp.target, &spec(p.cfg.policy(g.policy)), g.fold)?;
    let test = inp.target.select(&test_idx);
    let classes = test.manifest.class_indices()?;
    let maps = |b: &ClassifierBundle| gradcam_batch(p.exec, b, &test.images, &classes);
    let (raw_maps, aug_maps) = (maps(&raw)?, maps(&aug)?);
    let raw_pred = raw.predict(p.exec, &test.images);
    let aug_pred = aug.predict(p.exec, &test.images);

    let path = p.path(Artifact::GradcamMetrics);
    ensure_parent(&path)?;
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (mut raw_sum, mut aug_sum, mut n) = (0.0, 0.0, 0);
    for (i, rec) in test.manifest.records.iter().enumerate() {
        let fractions = match test.mask(i) {
            Some(mask) => Some((
                on_object_fraction(&raw_maps[i].normalized(), &mask)?,
                on_object_fraction(&aug_maps[i].normalized(), &mask)?,
            )),
            None => None,
        };
        if let Some((r, a)) = fractions {
            raw_sum += r;
            aug_sum += a;
            n += 1;
        }
        w.serialize(GradcamCsvRow {
            id: &rec.id,
            label: rec.label.as_deref().unwrap_or(""),
            raw_pred: &raw.labels[raw_pred[i]],
            aug_pred: &aug.labels[aug_pred[i]],
            raw_on_object: fractions.map(|f| f.0),
            aug_on_object: fractions.map(|f| f.1),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let rows = (0..test.len().min(g.overlays))
        .map(|i| {
            Ok(vec![
                test.images[i].clone(),
                overlay(&raw_maps[i].normalized(), &test.images[i])?,
                overlay(&aug_maps[i].normalized(), &test.images[i])?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    save_png(&p.path(Artifact::GradcamOverlays), &grid(&rows))?;

    let nf = n.max(1) as f64;
    let summary = GradcamSummary {
        fold: g.fold,
        real_fraction: g.real_fraction,
        policy: g.policy.name().to_string(),
        n,
        raw_accuracy: raw_res.accuracy,
        aug_accuracy: aug_res.accuracy,
        raw_on_object: raw_sum / nf,
        aug_on_object: aug_sum / nf,
        delta: (aug_sum - raw_sum) / nf,
    };
    log::info!(
        "on-object attention raw {:.3}, augmented {:.3}",
        summary.raw_on_object,
        summary.aug_on_object
    );
    write_json(&p.path(Artifact::GradcamSummary), &summary)
}
