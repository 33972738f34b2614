use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Grads, ParamStore, Scalar, Tensor2};

/// Adam hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1.5e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (what, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{what} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps < 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("eps and weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Tensor2<T>>,
    pub v: BTreeMap<String, Tensor2<T>>,
    /// Number of completed steps.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    /// Zero moments shaped like `params`.
    pub fn for_params(params: &ParamStore<T>) -> Self {
        let mut s = Self::new();
        for (name, p) in params.iter() {
            s.m.insert(name.clone(), Tensor2::zeros(p.value.rows, p.value.cols));
            s.v.insert(name.clone(), Tensor2::zeros(p.value.rows, p.value.cols));
        }
        s
    }
}

/// One Adam step: `t` advances first, then for every parameter
///
/// ```text
/// m <- b1 m + (1 - b1) g
/// v <- b2 v + (1 - b2) g^2
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
/// ```
///
/// Gradients are checked for finiteness before anything is modified.
/// Parameters without a gradient entry are left untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("gradient for unknown parameter {name}")))?;
        if p.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: gradient {:?} vs parameter {:?}",
                g.shape(),
                p.value.shape()
            )));
        }
    }

    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let b1 = T::c(cfg.beta1);
    let b2 = T::c(cfg.beta2);
    let one = T::one();
    let bc1 = one - T::c(cfg.beta1).powi(t);
    let bc2 = one - T::c(cfg.beta2).powi(t);
    let lr = T::c(cfg.lr);
    let eps = T::c(cfg.eps);
    let decay = T::c(cfg.lr * cfg.weight_decay);

    for (name, g) in grads.iter() {
        let p = params.value_mut(name);
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor2::zeros(g.rows, g.cols));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor2::zeros(g.rows, g.cols));
        for i in 0..g.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (one - b1) * gi;
            v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            let theta = p.data[i];
            p.data[i] = theta - lr * m_hat / (v_hat.sqrt() + eps) - decay * theta;
        }
    }
    Ok(())
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<T: Scalar>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|(_, g)| g.data.iter().map(|v| v.f64() * v.f64()).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::c(max_norm / norm));
    }
    norm
}
