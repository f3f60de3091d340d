//! Ridge-regression pose probe on latent vectors and the thresholded
//! direction extracted from it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear map `ŷ = a·w + b` fitted by ridge regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub r2: f64,
    pub n: usize,
}

impl PoseProbe {
    pub fn predict(&self, w: &[f32]) -> f64 {
        self.bias + self.weights.iter().zip(w).map(|(a, &x)| a * x as f64).sum::<f64>()
    }
}

/// Default shrinkage `1e-3 · tr(WcᵀWc) / dim` for centred data `Wc`.
pub fn default_lambda(rows: &[Vec<f32>]) -> f64 {
    let (_, wc) = centred(rows);
    let dim = wc.ncols().max(1);
    1e-3 * wc.iter().map(|v| v * v).sum::<f64>() / dim as f64
}

fn centred(rows: &[Vec<f32>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    let mut m = DMatrix::from_fn(n, dim, |i, j| rows[i][j] as f64);
    let mean = DVector::from_fn(dim, |j, _| m.column(j).sum() / n as f64);
    for j in 0..dim {
        m.column_mut(j).add_scalar_mut(-mean[j]);
    }
    (mean, m)
}

/// Fits `a = (WcᵀWc + λI)⁻¹ Wcᵀ yc` on centred data with `b = ȳ − a·w̄`.
/// `lambda = None` selects [`default_lambda`].
pub fn fit_probe(rows: &[Vec<f32>], y: &[f64], lambda: Option<f64>) -> Result<PoseProbe> {
    let n = rows.len();
    if n != y.len() {
        return Err(Error::shape("fit_probe", format!("{n} latents vs {} targets", y.len())));
    }
    let dim = rows.first().map_or(0, Vec::len);
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("fit_probe", "latents must share a non-zero length"));
    }
    if n < dim {
        return Err(Error::param("rows", format!("need at least {dim} samples, got {n}")));
    }
    if !y.iter().all(|v| v.is_finite()) || !rows.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::non_finite("probe training data"));
    }
    let lambda = lambda.unwrap_or_else(|| default_lambda(rows));
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", "must be finite and non-negative"));
    }
    let (mean, wc) = centred(rows);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);

    let mut gram = wc.transpose() * &wc;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    for i in 0..dim {
        gram[(i, i)] += lambda;
    }
    let rhs = wc.transpose() * &yc;
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    // Cholesky succeeds on numerically singular matrices with tiny pivots.
    let min_pivot = chol.l_dirty().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-12 * scale {
        return Err(singular());
    }
    let a = chol.solve(&rhs);
    let bias = y_mean - a.dot(&mean);

    let pred = &wc * &a;
    let ss_res: f64 = (0..n).map(|i| (yc[i] - pred[i]).powi(2)).sum();
    let ss_tot: f64 = yc.iter().map(|v| v * v).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(PoseProbe {
        weights: a.iter().copied().collect(),
        bias,
        lambda,
        r2,
        n,
    })
}

fn singular() -> Error {
    Error::Singular("latent Gram matrix is singular; use a positive ridge lambda".into())
}

/// Unit direction in W along which the probe's prediction increases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionVector {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub tau: f64,
    /// Oracle degrees per unit of traversal coefficient, once calibrated.
    pub degrees_per_unit: Option<f64>,
    pub attribute: String,
    /// `a·d` for the probe it came from: the predicted shift per unit.
    pub probe_gain: f64,
    pub probe_r2: f64,
    pub probe_lambda: f64,
    pub probe_n: usize,
}

impl DirectionVector {
    pub fn as_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn negated(&self) -> DirectionVector {
        DirectionVector {
            values: self.values.iter().map(|v| -v).collect(),
            degrees_per_unit: self.degrees_per_unit.map(|d| -d),
            probe_gain: -self.probe_gain,
            ..self.clone()
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let d: DirectionVector = serde_json::from_str(&text)?;
        let norm = d.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if d.values.len() != d.mask.len() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Format(format!("{}: not a unit direction", path.display())));
        }
        Ok(d)
    }
}

/// Zeroes every weight with `|aᵢ| < τ·max|a|` and normalises the rest.
pub fn extract_direction(probe: &PoseProbe, tau: f64) -> Result<DirectionVector> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::param("tau", "must lie in [0, 1)"));
    }
    let a = &probe.weights;
    let max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mask: Vec<bool> = a.iter().map(|v| max > 0.0 && v.abs() >= tau * max).collect();
    let kept: Vec<f64> = a.iter().zip(&mask).map(|(&v, &k)| if k { v } else { 0.0 }).collect();
    let norm = kept.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Empty("threshold removed every dimension; use a smaller tau".into()));
    }
    let values: Vec<f64> = kept.iter().map(|v| v / norm).collect();
    let probe_gain = values.iter().zip(a).map(|(d, a)| d * a).sum();
    Ok(DirectionVector {
        values,
        mask,
        tau,
        degrees_per_unit: None,
        attribute: "yaw".into(),
        probe_gain,
        probe_r2: probe.r2,
        probe_lambda: probe.lambda,
        probe_n: probe.n,
    })
}
