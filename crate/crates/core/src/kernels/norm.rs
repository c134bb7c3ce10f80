use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::LayerParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    Train,
    Infer,
}

/// Saved state of a train-mode batch normalization, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn channels<T: Scalar>(op: &'static str, input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = input.last_dim();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            op,
            format!(
                "channel dim {c} vs gamma {} / beta {}",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    Ok(c)
}

/// Normalizes every channel (last axis) with statistics over all other axes.
pub fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let c = channels("batchnorm", input, gamma, beta)?;
    let m = input.len() / c;
    if m == 0 {
        return Err(Error::Empty("batchnorm batch"));
    }
    let x = input.data();
    let mut mean = vec![T::zero(); c];
    for row in x.chunks(c) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    let mf = T::c(m as f64);
    mean.iter_mut().for_each(|v| *v = *v / mf);
    let mut var = vec![T::zero(); c];
    for row in x.chunks(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v = *v / mf);
    let mut inv_std = Vec::with_capacity(c);
    for &v in &var {
        let s = v + eps;
        if s <= T::zero() {
            return Err(Error::NonFinite("batchnorm: zero variance with eps=0".into()));
        }
        inv_std.push(T::one() / s.sqrt());
    }
    let mut xhat = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        for ch in 0..c {
            let xh = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(xh);
            out.push(gamma.data()[ch] * xh + beta.data()[ch]);
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Affine normalization with fixed statistics (running stats at inference).
pub fn batchnorm_infer<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<(Tensor<T>, Vec<T>)> {
    let c = channels("batchnorm", input, gamma, beta)?;
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let out = input
        .data()
        .chunks(c)
        .flat_map(|row| {
            (0..c).map(|ch| gamma.data()[ch] * (row[ch] - mean[ch]) * inv_std[ch] + beta.data()[ch])
                .collect::<Vec<_>>()
        })
        .collect();
    Ok((Tensor::new(input.shape().to_vec(), out)?, inv_std))
}

/// Gradients `(dx, dgamma, dbeta)` of train-mode batch normalization.
pub fn batchnorm_train_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
    grad_out: &Tensor<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let dy = grad_out.data();
    let m = dy.len() / c;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (row, xh) in dy.chunks(c).zip(cache.xhat.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += row[ch] * xh[ch];
            dbeta[ch] += row[ch];
        }
    }
    let mf = T::c(m as f64);
    let mut dx = Vec::with_capacity(dy.len());
    for (row, xh) in dy.chunks(c).zip(cache.xhat.chunks(c)) {
        for ch in 0..c {
            let g = gamma.data()[ch];
            // dxhat = dy·γ; Σdxhat = γ·dβ; Σdxhat·xhat = γ·dγ
            let v = g * cache.inv_std[ch] / mf * (mf * row[ch] - dbeta[ch] - xh[ch] * dgamma[ch]);
            dx.push(v);
        }
    }
    (dx, dgamma, dbeta)
}

/// Batch normalization driven by a layer's parameter set (`gamma`, `beta`,
/// `running_mean`, `running_var`). Train mode normalizes with batch statistics
/// and folds them into the running averages with `momentum`; infer mode uses
/// the running averages.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    mode: BnMode,
    eps: T,
    momentum: T,
) -> Result<Tensor<T>> {
    let gamma = params.get("gamma")?.clone();
    let beta = params.get("beta")?.clone();
    match mode {
        BnMode::Train => {
            let (out, cache) = batchnorm_train(input, &gamma, &beta, eps)?;
            update_running_stats(params, &cache.mean, &cache.var, momentum)?;
            Ok(out)
        }
        BnMode::Infer => {
            let mean = params.get("running_mean")?.data().to_vec();
            let var = params.get("running_var")?.data().to_vec();
            Ok(batchnorm_infer(input, &gamma, &beta, &mean, &var, eps)?.0)
        }
    }
}

pub fn update_running_stats<T: Scalar>(
    params: &mut LayerParams<T>,
    mean: &[T],
    var: &[T],
    momentum: T,
) -> Result<()> {
    let keep = momentum;
    let take = T::one() - momentum;
    for (name, stat) in [("running_mean", mean), ("running_var", var)] {
        let r = params.get_mut(name)?;
        for (a, &b) in r.data_mut().iter_mut().zip(stat) {
            *a = keep * *a + take * b;
        }
    }
    Ok(())
}

/// Saved state of layer normalization.
#[derive(Debug, Clone)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes each row (last axis) independently.
pub fn layernorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LnCache<T>)> {
    let d = channels("layernorm", input, gamma, beta)?;
    let df = T::c(d as f64);
    let mut xhat = Vec::with_capacity(input.len());
    let mut inv_std = Vec::with_capacity(input.len() / d);
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks(d) {
        let mean = row.iter().copied().sum::<T>() / df;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for (i, &v) in row.iter().enumerate() {
            let xh = (v - mean) * is;
            xhat.push(xh);
            out.push(gamma.data()[i] * xh + beta.data()[i]);
        }
    }
    Ok((Tensor::new(input.shape().to_vec(), out)?, LnCache { xhat, inv_std }))
}

pub fn layernorm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &LnCache<T>,
    grad_out: &Tensor<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = gamma.len();
    let df = T::c(d as f64);
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let mut dx = Vec::with_capacity(grad_out.len());
    for ((dy, xh), &is) in grad_out
        .data()
        .chunks(d)
        .zip(cache.xhat.chunks(d))
        .zip(&cache.inv_std)
    {
        let mut sum_dxh = T::zero();
        let mut sum_dxh_xh = T::zero();
        for i in 0..d {
            dgamma[i] += dy[i] * xh[i];
            dbeta[i] += dy[i];
            let dxh = dy[i] * gamma.data()[i];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[i];
        }
        for i in 0..d {
            let dxh = dy[i] * gamma.data()[i];
            dx.push(is / df * (df * dxh - sum_dxh - xh[i] * sum_dxh_xh));
        }
    }
    (dx, dgamma, dbeta)
}
