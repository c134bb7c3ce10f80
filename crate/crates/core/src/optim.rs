//! Adam with bias correction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::Gradients;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    m: HashMap<ParamId, Vec<T>>,
    v: HashMap<ParamId, Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: HashMap::new(),
            v: HashMap::new(),
            step: 0,
        }
    }
}

/// One Adam update of every parameter in `grads` accepted by `update`.
/// Rejects the whole step if any selected gradient is non-finite.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    update: impl Fn(ParamId) -> bool,
) -> Result<()> {
    let mut ids: Vec<ParamId> = grads.params.keys().copied().filter(|&id| update(id)).collect();
    ids.sort();
    for &id in &ids {
        let g = &grads.params[&id];
        if g.shape() != store.tensor(id).shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{}: grad {:?} vs param {:?}", store.key(id), g.shape(), store.tensor(id).shape()),
            ));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", store.key(id))));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let lr = T::c(cfg.lr);
    let eps = T::c(cfg.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for id in ids {
        let g = grads.params[&id].data();
        let m = state.m.entry(id).or_insert_with(|| vec![T::zero(); g.len()]);
        let v = state.v.entry(id).or_insert_with(|| vec![T::zero(); g.len()]);
        let p = store.tensor_mut(id).data_mut();
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
