use rand::seq::index::sample;
use serde::Serialize;

use super::{Bound, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    /// Arrays larger than this are checked on a random subset of this many
    /// coordinates.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `eps`, for every trainable entry of `params`.
pub fn grad_check<T, F>(
    f: F,
    params: &ParamStore<T>,
    eps: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    F: for<'t> Fn(&'t Tape<T>, &Bound<'t, T>) -> Result<Var<'t, T>>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::param("eps", "must be positive"));
    }
    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let out = f(&tape, &bound)?;
        if out.value().len() != 1 {
            return Err(Error::shape("grad_check", "function must be scalar-valued"));
        }
        Ok(out.item().as_f64())
    };

    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = f(&tape, &bound)?;
    if out.value().len() != 1 {
        return Err(Error::shape("grad_check", "function must be scalar-valued"));
    }
    if !out.item().is_finite() {
        return Err(Error::non_finite("grad_check: unperturbed function value"));
    }
    let grads = bound.grads(&tape.backward(out));

    let mut rng = seed::rng(opts.seed);
    let mut work = params.clone();
    let mut checks = Vec::new();
    for (name, analytic) in &grads {
        let n = analytic.len();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = (0.0f64, 0usize);
        for &i in &coords {
            let orig = work.get(name).unwrap().data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = T::lit(orig.as_f64() + eps);
            let plus = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = T::lit(orig.as_f64() - eps);
            let minus = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::non_finite(format!(
                    "grad_check: perturbing {name}[{i}] by ±{eps}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let e = rel_err(analytic.data()[i].as_f64(), numeric);
            if e > worst.0 {
                worst = (e, i);
            }
        }
        checks.push(ParamCheck {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_err: worst.0,
            worst_coord: worst.1,
        });
    }
    let passed = checks.iter().all(|c| c.max_rel_err < opts.tolerance);
    Ok(GradCheckReport {
        params: checks,
        tolerance: opts.tolerance,
        passed,
    })
}
