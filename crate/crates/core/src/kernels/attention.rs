//! Multi-head scaled dot-product self-attention with key masking.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct AttnCache<T> {
    /// Attention weights `[B, H, L, L]`; masked keys hold exactly zero.
    pub probs: Vec<T>,
}

struct Dims {
    b: usize,
    l: usize,
    d: usize,
    heads: usize,
    dh: usize,
}

fn dims<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize, mask: &[bool]) -> Result<Dims> {
    if q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::shape(
            "attention",
            format!("q/k/v must share a [B,L,D] shape: {:?} {:?} {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let (b, l, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape("attention", format!("model dim {d} not divisible by {heads} heads")));
    }
    if mask.len() != b * l {
        return Err(Error::shape("attention", format!("mask length {} != {}", mask.len(), b * l)));
    }
    Ok(Dims {
        b,
        l,
        d,
        heads,
        dh: d / heads,
    })
}

/// `out[b,i] = Σ_j softmax_j(q_i·k_j/√dh) v_j` per head, over keys with `mask = true`.
/// A query row whose batch has no valid key attends to nothing (zero output).
pub fn attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    mask: &[bool],
) -> Result<(Tensor<T>, AttnCache<T>)> {
    let g = dims(q, k, v, heads, mask)?;
    let scale = T::one() / T::c(g.dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut probs = vec![T::zero(); g.b * g.heads * g.l * g.l];
    let mut out = vec![T::zero(); g.b * g.l * g.d];
    let mut scores = vec![T::zero(); g.l];
    for b in 0..g.b {
        let keys = &mask[b * g.l..(b + 1) * g.l];
        for h in 0..g.heads {
            let off = h * g.dh;
            for i in 0..g.l {
                let qi = &qd[(b * g.l + i) * g.d + off..][..g.dh];
                let mut max = T::neg_infinity();
                for j in 0..g.l {
                    if !keys[j] {
                        continue;
                    }
                    let kj = &kd[(b * g.l + j) * g.d + off..][..g.dh];
                    let s = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale;
                    scores[j] = s;
                    max = max.max(s);
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let p = &mut probs[((b * g.heads + h) * g.l + i) * g.l..][..g.l];
                let mut z = T::zero();
                for j in 0..g.l {
                    if keys[j] {
                        p[j] = (scores[j] - max).exp();
                        z += p[j];
                    }
                }
                let o = &mut out[(b * g.l + i) * g.d + off..][..g.dh];
                for j in 0..g.l {
                    if keys[j] {
                        p[j] = p[j] / z;
                        let vj = &vd[(b * g.l + j) * g.d + off..][..g.dh];
                        for (acc, &val) in o.iter_mut().zip(vj) {
                            *acc += p[j] * val;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(q.shape().to_vec(), out)?, AttnCache { probs }))
}

/// Gradients `(dq, dk, dv)` of [`attention`].
pub fn attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    mask: &[bool],
    cache: &AttnCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = dims(q, k, v, heads, mask)?;
    let scale = T::one() / T::c(g.dh as f64).sqrt();
    let (qd, kd, vd, dy) = (q.data(), k.data(), v.data(), grad_out.data());
    let mut dq = vec![T::zero(); qd.len()];
    let mut dk = vec![T::zero(); kd.len()];
    let mut dv = vec![T::zero(); vd.len()];
    let mut dp = vec![T::zero(); g.l];
    for b in 0..g.b {
        let keys = &mask[b * g.l..(b + 1) * g.l];
        for h in 0..g.heads {
            let off = h * g.dh;
            for i in 0..g.l {
                let p = &cache.probs[((b * g.heads + h) * g.l + i) * g.l..][..g.l];
                let doi = &dy[(b * g.l + i) * g.d + off..][..g.dh];
                let mut dot = T::zero();
                for j in 0..g.l {
                    if !keys[j] {
                        continue;
                    }
                    let vj = &vd[(b * g.l + j) * g.d + off..][..g.dh];
                    dp[j] = doi.iter().zip(vj).map(|(&a, &c)| a * c).sum();
                    dot += p[j] * dp[j];
                    let dvj = &mut dv[(b * g.l + j) * g.d + off..][..g.dh];
                    for (acc, &val) in dvj.iter_mut().zip(doi) {
                        *acc += p[j] * val;
                    }
                }
                for j in 0..g.l {
                    if !keys[j] {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for t in 0..g.dh {
                        let qi = (b * g.l + i) * g.d + off + t;
                        let kj = (b * g.l + j) * g.d + off + t;
                        dq[qi] += ds * kd[kj];
                        dk[kj] += ds * qd[qi];
                    }
                }
            }
        }
    }
    let shape = q.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), dq)?,
        Tensor::new(shape.clone(), dk)?,
        Tensor::new(shape, dv)?,
    ))
}
