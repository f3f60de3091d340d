//! Stratified k-fold cross-validation and the real-data-reduction sweep.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classifier::{evaluate, train_classifier, ClassifierBundle, ClassifierConfig};
use crate::augmenter::{build_mix, mix_counts, AugmentPolicy, MixSpec, Synthesizer};
use crate::error::{Error, Result};
use crate::inversion::LatentRecord;
use crate::par::{self, Exec};
use crate::scenegen::{Dataset, DatasetManifest};
use crate::seed;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_FRACTIONS: [f64; 6] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];

/// Test-fold indices: each class is shuffled and dealt round-robin.
pub fn stratified_folds(manifest: &DatasetManifest, k: usize, seed_: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::param("k", "need at least two folds"));
    }
    let classes = manifest.class_indices()?;
    let mut folds = vec![Vec::new(); k];
    for (ci, label) in manifest.meta.labels.iter().enumerate() {
        let mut idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == ci).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::param(
                "k",
                format!("class `{label}` has {} samples, fewer than {k} folds", idx.len()),
            ));
        }
        idx.shuffle(&mut seed::rng(seed::derive(seed::derive(seed_, "folds"), label)));
        for (j, i) in idx.into_iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// True when no synthetic training record was derived from a test record.
pub fn fold_is_clean(train: &DatasetManifest, test: &DatasetManifest) -> bool {
    let test_ids: HashSet<&str> = test.records.iter().map(|r| r.id.as_str()).collect();
    train.records.iter().all(|r| {
        !test_ids.contains(r.id.as_str()) && r.source.as_deref().is_none_or(|s| !test_ids.contains(s))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub n_real: usize,
    pub n_synth: usize,
    pub n_test: usize,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResults {
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Everything a cross-validation run needs besides the data.
#[derive(Clone, Copy, Debug)]
pub struct CvContext<'a> {
    pub exec: Exec,
    pub latents: &'a [LatentRecord],
    pub synth: Option<&'a Synthesizer<'a>>,
    pub classifier: &'a ClassifierConfig,
    pub k: usize,
    pub seed: u64,
}

/// Seeds that depend only on the master seed and the fold, so every sweep
/// cell shares splits, subsamples and classifier initialisation.
fn fold_seeds(seed_: u64, fold: usize) -> (u64, u64) {
    (
        seed::derive_index(seed_, "mix", fold as u64),
        seed::derive_index(seed_, "classifier", fold as u64),
    )
}

fn run_fold(
    ctx: &CvContext<'_>,
    target: &Dataset,
    spec: &MixSpec,
    test_idx: &[usize],
    fold: usize,
) -> Result<(FoldResult, ClassifierBundle)> {
    let in_test: HashSet<usize> = test_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..target.len()).filter(|i| !in_test.contains(i)).collect();
    let train = target.select(&train_idx);
    let test = target.select(test_idx);
    let (mix_seed, cls_seed) = fold_seeds(ctx.seed, fold);
    let spec = MixSpec {
        policy: AugmentPolicy {
            seed: mix_seed,
            ..spec.policy.clone()
        },
        ..spec.clone()
    };
    let mixed = build_mix(ctx.exec, &train, &spec, ctx.latents, ctx.synth)?;
    debug_assert!(fold_is_clean(&mixed.manifest, &test.manifest));
    let bundle = train_classifier(
        &mixed,
        &ClassifierConfig {
            seed: cls_seed,
            ..ctx.classifier.clone()
        },
    )?;
    let eval = evaluate(ctx.exec, &bundle, &test)?;
    let (n_real, n_synth) = mix_counts(&mixed.manifest);
    Ok((
        FoldResult {
            fold,
            accuracy: eval.accuracy,
            n_real,
            n_synth,
            n_test: eval.n,
            confusion: eval.confusion,
        },
        bundle,
    ))
}

/// Stratified k-fold cross-validation: each fold mixes only its training
/// portion and is evaluated on its untouched real test fold.
pub fn cross_validate(ctx: &CvContext<'_>, target: &Dataset, spec: &MixSpec) -> Result<FoldResults> {
    Ok(cross_validate_with_models(ctx, target, spec)?.0)
}

/// As [`cross_validate`], also returning each fold's classifier and test
/// indices.
pub fn cross_validate_with_models(
    ctx: &CvContext<'_>,
    target: &Dataset,
    spec: &MixSpec,
) -> Result<(FoldResults, Vec<(ClassifierBundle, Vec<usize>)>)> {
    spec.validate()?;
    let folds = stratified_folds(&target.manifest, ctx.k, ctx.seed)?;
    let runs = par::map_range(ctx.exec, folds.len(), |f| run_fold(ctx, target, spec, &folds[f], f))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut results = Vec::with_capacity(runs.len());
    let mut models = Vec::with_capacity(runs.len());
    for ((r, b), idx) in runs.into_iter().zip(folds) {
        results.push(r);
        models.push((b, idx));
    }
    let acc: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let (mean, std) = mean_std(&acc);
    Ok((FoldResults { folds: results, mean, std }, models))
}

/// Runs fold `fold` only, returning its result, classifier and test indices.
pub fn run_single_fold(
    ctx: &CvContext<'_>,
    target: &Dataset,
    spec: &MixSpec,
    fold: usize,
) -> Result<(FoldResult, ClassifierBundle, Vec<usize>)> {
    spec.validate()?;
    let mut folds = stratified_folds(&target.manifest, ctx.k, ctx.seed)?;
    if fold >= folds.len() {
        return Err(Error::param("fold", format!("{fold} not below {}", folds.len())));
    }
    let test_idx = folds.swap_remove(fold);
    let (r, b) = run_fold(ctx, target, spec, &test_idx, fold)?;
    Ok((r, b, test_idx))
}

/// One CSV row of the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub policy: String,
    pub fold: usize,
    /// Empty when the cell failed.
    pub accuracy: Option<f64>,
    pub n_real: usize,
    pub n_synth: usize,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub fraction: f64,
    pub policy: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub folds: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfigEcho {
    pub fractions: Vec<f64>,
    pub policies: Vec<AugmentPolicy>,
    pub k: usize,
    pub seed: u64,
    pub classifier: ClassifierConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
    pub config: SweepConfigEcho,
}

impl SweepReport {
    pub fn cell(&self, fraction: f64, policy: &str) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| (c.fraction - fraction).abs() < 1e-12 && c.policy == policy)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fraction", "policy", "fold", "accuracy", "n_real", "n_synth"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.fraction.to_string(),
                r.policy.clone(),
                r.fold.to_string(),
                r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                r.n_real.to_string(),
                r.n_synth.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `sweep.csv` and `sweep.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("sweep.csv");
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join("sweep.json");
        std::fs::write(&json_path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("sweep.json");
        Ok(serde_json::from_slice(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Cross-validates every (fraction, policy) cell. A failing cell is recorded
/// with its error and the sweep continues.
pub fn reduction_sweep(
    ctx: &CvContext<'_>,
    target: &Dataset,
    fractions: &[f64],
    policies: &[AugmentPolicy],
) -> Result<SweepReport> {
    if policies.is_empty() {
        return Err(Error::param("policies", "need at least one policy"));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::param("fractions", format!("{f} not in (0, 1]")));
    }
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &fraction in fractions {
        for policy in policies {
            let spec = MixSpec {
                real_fraction: fraction,
                policy: policy.clone(),
                stratified: true,
            };
            let name = policy.kind.name().to_string();
            log::info!("sweep cell fraction {fraction} policy {name}");
            match cross_validate(ctx, target, &spec) {
                Ok(res) => {
                    for f in &res.folds {
                        rows.push(SweepRow {
                            fraction,
                            policy: name.clone(),
                            fold: f.fold,
                            accuracy: Some(f.accuracy),
                            n_real: f.n_real,
                            n_synth: f.n_synth,
                            error: None,
                        });
                    }
                    cells.push(SweepCell {
                        fraction,
                        policy: name,
                        mean: Some(res.mean),
                        std: Some(res.std),
                        folds: res.folds.len(),
                        error: None,
                    });
                }
                Err(e) => {
                    log::warn!("sweep cell ({fraction}, {name}) failed: {e}");
                    for fold in 0..ctx.k {
                        rows.push(SweepRow {
                            fraction,
                            policy: name.clone(),
                            fold,
                            accuracy: None,
                            n_real: 0,
                            n_synth: 0,
                            error: Some(e.to_string()),
                        });
                    }
                    cells.push(SweepCell {
                        fraction,
                        policy: name,
                        mean: None,
                        std: None,
                        folds: 0,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    Ok(SweepReport {
        rows,
        cells,
        config: SweepConfigEcho {
            fractions: fractions.to_vec(),
            policies: policies.to_vec(),
            k: ctx.k,
            seed: ctx.seed,
            classifier: ctx.classifier.clone(),
        },
    })
}
