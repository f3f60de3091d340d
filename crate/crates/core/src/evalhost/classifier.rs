//! Small from-scratch CNN for the ten target classes.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_model, Image};
use crate::numerics::{
    adam_step, checkpoint, grad_check, softmax_rows, AdamConfig, AdamState, Array, Bound, GradCheckOptions,
    GradCheckReport, ParamStore, Real, Tape, Var,
};
use crate::par::{self, Exec};
use crate::scenegen::Dataset;
use crate::seed;

/// Channels of the three stride-2 conv blocks.
pub const CLASSIFIER_CHANNELS: [usize; 3] = [16, 32, 64];
/// Side of the final conv feature map (32 → 16 → 8 → 4).
pub const FEATURE_SIZE: usize = 4;
const PREDICT_CHUNK: usize = 256;

pub fn init_classifier<T: Real>(num_classes: usize, seed_: u64) -> Result<ParamStore<T>> {
    if num_classes < 2 {
        return Err(Error::param("num_classes", "need at least two classes"));
    }
    let mut rng = seed::rng(seed::derive(seed_, "classifier-init"));
    let mut p = ParamStore::new();
    let mut cin = 3;
    for (i, &c) in CLASSIFIER_CHANNELS.iter().enumerate() {
        let fan_in = cin * 9;
        p.insert(
            format!("cls.conv{i}.w"),
            Array::randn(&[c, cin, 3, 3], (2.0 / fan_in as f64).sqrt(), &mut rng),
        )?;
        p.insert(format!("cls.conv{i}.b"), Array::zeros(&[c]))?;
        cin = c;
    }
    p.insert("cls.fc.w", Array::randn(&[num_classes, cin], (1.0 / cin as f64).sqrt(), &mut rng))?;
    p.insert("cls.fc.b", Array::zeros(&[num_classes]))?;
    Ok(p)
}

/// Final conv activations `[N, 64, 4, 4]` (post-ReLU).
pub fn classifier_features<'t, T: Real>(p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
    (0..CLASSIFIER_CHANNELS.len()).fold(x, |h, i| {
        h.conv2d(p.get(&format!("cls.conv{i}.w")), 2, 1)
            .add_channel_bias(p.get(&format!("cls.conv{i}.b")))
            .relu()
    })
}

/// Global average pool and dense layer to logits `[N, K]`.
pub fn classifier_head<'t, T: Real>(p: &Bound<'t, T>, feats: Var<'t, T>) -> Var<'t, T> {
    feats.global_avg_pool().linear(p.get("cls.fc.w"), p.get("cls.fc.b"))
}

pub fn classifier_forward<'t, T: Real>(p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
    classifier_head(p, classifier_features(p, x))
}

/// Finite-difference check of the classifier in f64.
pub fn check_classifier_grads(seed_: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let store = init_classifier::<f64>(10, seed_)?;
    let mut rng = seed::rng(seed::derive(seed_, "classifier-gradcheck"));
    let x = Array::<f64>::randn(&[4, 3, 32, 32], 0.5, &mut rng);
    let labels = [0, 3, 7, 9];
    grad_check(
        |t, p: &Bound<'_, f64>| Ok(classifier_forward(p, t.constant(x.clone())).cross_entropy(&labels)),
        &store,
        1e-6,
        opts,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 30,
            batch: 32,
            lr: 5e-3,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::param("batch", "must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::param("lr", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the in-training predictions over the epoch.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ClassifierMeta {
    labels: Vec<String>,
    history: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct ClassifierBundle {
    pub params: ParamStore<f32>,
    pub labels: Vec<String>,
    pub history: Vec<EpochRecord>,
}

impl ClassifierBundle {
    /// Freshly initialised, untrained classifier.
    pub fn untrained(labels: Vec<String>, seed_: u64) -> Result<Self> {
        Ok(ClassifierBundle {
            params: init_classifier(labels.len(), seed_)?,
            labels,
            history: Vec::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Logits `[N, K]` for a model-scale batch.
    pub fn logits_model(&self, exec: Exec, x: &Array<f32>) -> Array<f32> {
        let n = x.dim(0);
        let k = self.num_classes();
        let chunks: Vec<(usize, usize)> =
            (0..n).step_by(PREDICT_CHUNK).map(|s| (s, PREDICT_CHUNK.min(n - s))).collect();
        let data: Vec<f32> = par::map_slice(exec, &chunks, |&(s, len)| {
            let tape = Tape::new();
            let p = self.params.bind_constants(&tape);
            classifier_forward(&p, tape.constant(x.slice_rows(s, len))).value().data().to_vec()
        })
        .into_iter()
        .flatten()
        .collect();
        Array::from_vec(&[n, k], data).unwrap()
    }

    pub fn logits(&self, exec: Exec, images: &[Image]) -> Array<f32> {
        if images.is_empty() {
            return Array::zeros(&[0, self.num_classes()]);
        }
        self.logits_model(exec, &to_model(images))
    }

    /// Class probabilities `[N, K]`.
    pub fn probabilities(&self, exec: Exec, images: &[Image]) -> Array<f32> {
        let logits = self.logits(exec, images);
        let k = self.num_classes();
        Array::from_vec(logits.shape(), softmax_rows(logits.data(), k)).unwrap()
    }

    /// Arg-max class per image (lowest index on ties).
    pub fn predict(&self, exec: Exec, images: &[Image]) -> Vec<usize> {
        argmax_rows(&self.logits(exec, images), self.num_classes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ClassifierMeta {
            labels: self.labels.clone(),
            history: self.history.clone(),
        };
        checkpoint::save(path, &self.params, &serde_json::to_value(meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        let meta: ClassifierMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Format(format!("{}: not a classifier checkpoint ({e})", path.display())))?;
        let expected = init_classifier::<f32>(meta.labels.len(), 0)?;
        let same = expected.len() == params.len()
            && expected.iter().all(|(k, p)| params.get(k).is_some_and(|a| a.shape() == p.value.shape()));
        if !same {
            return Err(Error::Format(format!("{}: not a classifier checkpoint", path.display())));
        }
        Ok(ClassifierBundle {
            params,
            labels: meta.labels,
            history: meta.history,
        })
    }
}

pub(crate) fn argmax_rows(x: &Array<f32>, k: usize) -> Vec<usize> {
    x.data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

/// Cross-entropy training with Adam and cosine learning-rate decay over a
/// fixed epoch budget. Deterministic given the data and `cfg.seed`.
pub fn train_classifier(data: &Dataset, cfg: &ClassifierConfig) -> Result<ClassifierBundle> {
    cfg.validate()?;
    let labels = data.manifest.class_indices()?;
    let k = data.manifest.meta.labels.len();
    let mut present: Vec<usize> = labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::param(
            "manifest",
            format!("training needs at least two classes, found {}", present.len()),
        ));
    }
    let x = to_model(&data.images);
    let n = labels.len();
    let mut params = init_classifier::<f32>(k, cfg.seed)?;
    let mut state = AdamState::new();
    let mut rng = seed::rng(seed::derive(cfg.seed, "classifier-train"));
    let total = cfg.epochs * n.div_ceil(cfg.batch);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in perm.chunks(cfg.batch) {
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let tape = Tape::new();
            let p = params.bind(&tape);
            let logits = classifier_forward(&p, tape.constant(x.select_rows(batch)));
            correct += argmax_rows(&logits.value(), k).iter().zip(&yb).filter(|(a, b)| a == b).count();
            let loss = logits.cross_entropy(&yb);
            let lv = loss.item() as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged { step, loss: lv });
            }
            loss_sum += lv * batch.len() as f64;
            let grads = p.grads(&tape.backward(loss));
            let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos());
            adam_step(&mut params, &grads, &mut state, &AdamConfig { lr: lr.max(1e-12), ..AdamConfig::default() })?;
            step += 1;
        }
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        });
        log::debug!("classifier epoch {epoch}: loss {:.4}", loss_sum / n as f64);
    }
    Ok(ClassifierBundle {
        params,
        labels: data.manifest.meta.labels.clone(),
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
}

/// Top-1 accuracy and confusion matrix on a labelled dataset.
pub fn evaluate(exec: Exec, bundle: &ClassifierBundle, data: &Dataset) -> Result<Evaluation> {
    let truth = data
        .manifest
        .records
        .iter()
        .map(|r| {
            let l = r
                .label
                .as_ref()
                .ok_or_else(|| Error::param("label", format!("record `{}` is unlabeled", r.id)))?;
            bundle
                .labels
                .iter()
                .position(|b| b == l)
                .ok_or_else(|| Error::UnknownLabel(l.clone()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let k = bundle.num_classes();
    let pred = bundle.predict(exec, &data.images);
    let mut confusion = vec![vec![0; k]; k];
    for (&t, &p) in truth.iter().zip(&pred) {
        confusion[t][p] += 1;
    }
    let hits: usize = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: hits as f64 / truth.len().max(1) as f64,
        confusion,
        n: truth.len(),
    })
}
