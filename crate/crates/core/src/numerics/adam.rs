use std::collections::{BTreeMap, HashMap};

use super::{Array, ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter name.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T = f32> {
    pub step: u64,
    moments: HashMap<String, (Array<T>, Array<T>)>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            moments: HashMap::new(),
        }
    }
}

/// One bias-corrected adaptive-moment update. Frozen entries are never
/// written, whatever gradient is supplied for them.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Array<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(Error::param("lr", "must be positive"));
    }
    for (name, g) in grads {
        let p = params
            .param(name)
            .ok_or_else(|| Error::param(name.as_str(), "gradient for unknown parameter"))?;
        if p.value.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: param {:?} vs grad {:?}", p.value.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (ob1, ob2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    // With beta = 0 the correction factor is exactly 1.
    let step_size = T::lit(cfg.lr / if bc1 > 0.0 { bc1 } else { 1.0 });
    let inv_sqrt_bc2 = T::lit(1.0 / if bc2 > 0.0 { bc2.sqrt() } else { 1.0 });
    let eps = T::lit(cfg.eps);
    for (name, g) in grads {
        if !params.is_trainable(name) {
            continue;
        }
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (Array::zeros(g.shape()), Array::zeros(g.shape())));
        let value = params.get_mut(name).expect("checked above");
        for i in 0..g.len() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + ob1 * gi;
            let vi = b2 * v.data()[i] + ob2 * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            value.data_mut()[i] -= step_size * mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}

/// Adam bound to a config; convenience for training loops.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Array<T>>) -> Result<()> {
        adam_step(params, grads, &mut self.state, &self.config)
    }
}
