//! Small CNN regressor from image to yaw, trained on labelled renders.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_model, Image};
use crate::numerics::{
    adam_step, checkpoint, grad_check, AdamConfig, AdamState, Array, Bound, GradCheckOptions, GradCheckReport,
    ParamStore, Real, Tape, Var,
};
use crate::par::{self, Exec};
use crate::scenegen::{Dataset, YAW_LIMIT};
use crate::seed;

const LRELU: f64 = 0.2;
const HIDDEN: usize = 64;
const PREDICT_CHUNK: usize = 256;

pub fn init_oracle<T: Real>(seed_: u64) -> Result<ParamStore<T>> {
    let mut rng = seed::rng(seed::derive(seed_, "oracle-init"));
    let he = |shape: &[usize], fan_in: usize, rng: &mut seed::Rng| Array::randn(shape, (2.0 / fan_in as f64).sqrt(), rng);
    let mut p = ParamStore::new();
    p.insert("oracle.conv0.w", he(&[16, 3, 3, 3], 27, &mut rng))?;
    p.insert("oracle.conv0.b", Array::zeros(&[16]))?;
    p.insert("oracle.conv1.w", he(&[32, 16, 3, 3], 144, &mut rng))?;
    p.insert("oracle.conv1.b", Array::zeros(&[32]))?;
    p.insert("oracle.fc0.w", he(&[HIDDEN, 2048], 2048, &mut rng))?;
    p.insert("oracle.fc0.b", Array::zeros(&[HIDDEN]))?;
    p.insert("oracle.fc1.w", Array::randn(&[1, HIDDEN], (1.0 / HIDDEN as f64).sqrt(), &mut rng))?;
    p.insert("oracle.fc1.b", Array::zeros(&[1]))?;
    Ok(p)
}

/// Yaw divided by the yaw limit, `[N, 1]`.
pub fn oracle_forward<'t, T: Real>(p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
    let slope = T::lit(LRELU);
    let h = x
        .conv2d(p.get("oracle.conv0.w"), 2, 1)
        .add_channel_bias(p.get("oracle.conv0.b"))
        .leaky_relu(slope)
        .conv2d(p.get("oracle.conv1.w"), 2, 1)
        .add_channel_bias(p.get("oracle.conv1.b"))
        .leaky_relu(slope);
    let n = h.shape()[0];
    h.reshape(&[n, 2048])
        .linear(p.get("oracle.fc0.w"), p.get("oracle.fc0.b"))
        .leaky_relu(slope)
        .linear(p.get("oracle.fc1.w"), p.get("oracle.fc1.b"))
}

/// Finite-difference check of the oracle network in f64.
pub fn check_oracle_grads(seed_: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let store = init_oracle::<f64>(seed_)?;
    let mut rng = seed::rng(seed::derive(seed_, "oracle-gradcheck"));
    let x = Array::<f64>::randn(&[4, 3, 32, 32], 0.5, &mut rng);
    let y = Array::<f64>::randn(&[4, 1], 0.5, &mut rng);
    grad_check(
        |t, p: &Bound<'_, f64>| Ok(oracle_forward(p, t.constant(x.clone())).sub_const(&y).square().mean()),
        &store,
        1e-6,
        opts,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub val_fraction: f64,
    /// Validation mean absolute error (degrees) the oracle must reach.
    pub max_mae: f64,
    /// Train on mirrored copies with negated yaw as well.
    pub flip: bool,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            epochs: 30,
            batch: 64,
            lr: 2e-3,
            val_fraction: 0.2,
            max_mae: 6.0,
            flip: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub train_mae: f64,
    pub val_mae: f64,
    pub n_train: usize,
    pub n_val: usize,
}

#[derive(Clone, Debug)]
pub struct PoseOracle {
    pub params: ParamStore<f32>,
}

/// Mirrors the images whose flag is set, `[N, C, H, W]`.
fn flip_some(x: &mut Array<f32>, which: &[bool]) {
    let (c, h, w) = (x.dim(1), x.dim(2), x.dim(3));
    for (i, _) in which.iter().enumerate().filter(|(_, &f)| f) {
        let img = &mut x.data_mut()[i * c * h * w..(i + 1) * c * h * w];
        for row in img.chunks_mut(w) {
            row.reverse();
        }
    }
}

fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len().max(1) as f64
}

pub fn pose_labels(data: &Dataset) -> Result<Vec<f64>> {
    data.manifest
        .records
        .iter()
        .map(|r| {
            r.pose_deg
                .ok_or_else(|| Error::param("manifest", format!("record `{}` has no pose label", r.id)))
        })
        .collect()
}

impl PoseOracle {
    /// Predicted yaw in degrees for a model-scale batch `[N, 3, 32, 32]`.
    pub fn predict_model(&self, exec: Exec, x: &Array<f32>) -> Vec<f64> {
        let n = x.dim(0);
        let chunks: Vec<(usize, usize)> =
            (0..n).step_by(PREDICT_CHUNK).map(|s| (s, PREDICT_CHUNK.min(n - s))).collect();
        par::map_slice(exec, &chunks, |&(s, len)| {
            let tape = Tape::new();
            let p = self.params.bind_constants(&tape);
            let y = oracle_forward(&p, tape.constant(x.slice_rows(s, len)));
            let out: Vec<f64> = y.value().data().iter().map(|&v| v as f64 * YAW_LIMIT).collect();
            out
        })
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn predict(&self, exec: Exec, images: &[Image]) -> Vec<f64> {
        if images.is_empty() {
            return Vec::new();
        }
        self.predict_model(exec, &to_model(images))
    }

    pub fn save(&self, path: &Path, report: &OracleReport) -> Result<()> {
        checkpoint::save(path, &self.params, &serde_json::to_value(report)?)
    }

    pub fn load(path: &Path) -> Result<(Self, OracleReport)> {
        let (params, meta) = checkpoint::load(path)?;
        let expected = init_oracle::<f32>(0)?;
        let same = expected.len() == params.len()
            && expected.iter().all(|(k, p)| params.get(k).is_some_and(|a| a.shape() == p.value.shape()));
        if !same {
            return Err(Error::Format(format!("{}: not a pose oracle checkpoint", path.display())));
        }
        Ok((PoseOracle { params }, serde_json::from_value(meta)?))
    }
}

/// Trains the oracle on pose-labelled renders. Fails with [`Error::Gate`] if
/// the validation error exceeds `cfg.max_mae`.
pub fn train_pose_oracle(exec: Exec, data: &Dataset, cfg: &OracleConfig) -> Result<(PoseOracle, OracleReport)> {
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::param("epochs", "epochs and batch must be at least 1"));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::param("val_fraction", "must lie in [0, 1)"));
    }
    let y = pose_labels(data)?;
    let n = y.len();
    let n_val = (n as f64 * cfg.val_fraction).round() as usize;
    if n - n_val < cfg.batch.min(2) {
        return Err(Error::param("manifest", format!("too few labelled renders ({n})")));
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, "oracle-train"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (val_idx, train_idx) = order.split_at(n_val);
    let x = to_model(&data.images);
    let x_train = x.select_rows(train_idx);
    let y_train: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();

    let mut params = init_oracle::<f32>(cfg.seed)?;
    let mut state = AdamState::new();
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch);
    let total = cfg.epochs * steps_per_epoch;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut perm: Vec<usize> = (0..train_idx.len()).collect();
        perm.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in perm.chunks(cfg.batch) {
            let mut xb = x_train.select_rows(batch);
            let flips: Vec<bool> = batch.iter().map(|_| cfg.flip && rng.random::<bool>()).collect();
            flip_some(&mut xb, &flips);
            let target: Vec<f32> = batch
                .iter()
                .zip(&flips)
                .map(|(&i, &f)| (if f { -y_train[i] } else { y_train[i] } / YAW_LIMIT) as f32)
                .collect();
            let t = Array::from_vec(&[batch.len(), 1], target)?;
            let tape = Tape::new();
            let p = params.bind(&tape);
            let loss = oracle_forward(&p, tape.constant(xb)).sub_const(&t).square().mean();
            let lv = loss.item() as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged { step, loss: lv });
            }
            epoch_loss += lv * batch.len() as f64;
            let grads = p.grads(&tape.backward(loss));
            // Cosine decay to zero over the run.
            let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos());
            adam_step(&mut params, &grads, &mut state, &AdamConfig { lr: lr.max(1e-12), ..AdamConfig::default() })?;
            step += 1;
        }
        log::debug!("oracle epoch {epoch}: mse {:.5}", epoch_loss / train_idx.len() as f64);
    }
    let oracle = PoseOracle { params };
    let train_mae = mae(&oracle.predict_model(exec, &x_train), &y_train);
    let val_mae = if n_val > 0 {
        let y_val: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();
        mae(&oracle.predict_model(exec, &x.select_rows(val_idx)), &y_val)
    } else {
        train_mae
    };
    let report = OracleReport { train_mae, val_mae, n_train: train_idx.len(), n_val };
    log::info!("pose oracle: train MAE {train_mae:.2}°, validation MAE {val_mae:.2}°");
    if val_mae > cfg.max_mae {
        return Err(Error::Gate(format!(
            "pose oracle validation MAE {val_mae:.2}° exceeds {:.2}°",
            cfg.max_mae
        )));
    }
    Ok((oracle, report))
}
