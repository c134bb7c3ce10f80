//! Gradient tape: records the listed kernels during forward and replays their
//! backward functions in exact reverse order.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::activation::{gelu, gelu_grad, relu, sigmoid};
use crate::kernels::attention::{attention, attention_backward, AttnCache};
use crate::kernels::conv::{conv2d, conv2d_backward, Padding};
use crate::kernels::dense::{dense, dense_backward};
use crate::kernels::loss::{bce_backward, bce_loss};
use crate::kernels::norm::{
    batchnorm_infer, batchnorm_train, batchnorm_train_backward, layernorm, layernorm_backward, BnCache,
    LnCache,
};
use crate::kernels::pool::{
    global_avg_pool, global_avg_pool_backward, masked_global_max_pool, maxpool2d, scatter_backward,
};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, padding: Padding },
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool { x: Var },
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, cache: BnCache<T> },
    BatchNormInfer { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T> },
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: LnCache<T> },
    Dense { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Gelu { x: Var },
    SoftmaxColumn { x: Var, class: usize },
    Bce { pred: Var, target: Vec<T>, eps: T },
    Add { a: Var, b: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, mask: Vec<bool>, cache: AttnCache<T> },
    Embedding { table: Var, ids: Vec<Option<usize>> },
    MaskedMean { x: Var, weights: Vec<T> },
    Concat { parts: Vec<Var> },
    Gather { x: Var, rows: Vec<usize> },
    Reshape { x: Var },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::GlobalMaxPool { .. } => "global_max_pool",
            Op::BatchNormTrain { .. } => "batchnorm_train",
            Op::BatchNormInfer { .. } => "batchnorm_infer",
            Op::LayerNorm { .. } => "layernorm",
            Op::Dense { .. } => "dense",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Gelu { .. } => "gelu",
            Op::SoftmaxColumn { .. } => "softmax",
            Op::Bce { .. } => "bce",
            Op::Add { .. } => "add",
            Op::Attention { .. } => "attention",
            Op::Embedding { .. } => "embedding",
            Op::MaskedMean { .. } => "masked_mean",
            Op::Concat { .. } => "concat",
            Op::Gather { .. } => "gather",
            Op::Reshape { .. } => "reshape",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Batch statistics observed by a train-mode batch norm, keyed by layer index.
#[derive(Debug, Clone)]
pub struct BnStats<T> {
    pub layer: usize,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Parameter gradients produced by [`GradTape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: HashMap<ParamId, Tensor<T>>,
    /// Node indices in the order backward visited them.
    pub visit_order: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }
}

pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    bn_stats: Vec<BnStats<T>>,
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            bn_stats: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn take_bn_stats(&mut self) -> Vec<BnStats<T>> {
        std::mem::take(&mut self.bn_stats)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Places a parameter on the tape once; later calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.tensor(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn named_param(&mut self, store: &ParamStore<T>, layer: &str, array: &str) -> Result<Var> {
        let id = store.id(layer, array)?;
        Ok(self.param(store, id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let y = conv2d(self.value(x), self.value(w), self.value(b), stride, padding)?;
        Ok(self.push(y, Op::Conv2d { x, w, b, stride, padding }))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (y, argmax) = maxpool2d(self.value(x), window)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool { x }))
    }

    pub fn global_max_pool(&mut self, x: Var, valid: &[bool]) -> Result<Var> {
        let (y, argmax) = masked_global_max_pool(self.value(x), valid)?;
        Ok(self.push(y, Op::GlobalMaxPool { x, argmax }))
    }

    /// Train-mode batch norm; the observed batch statistics are queued for
    /// [`take_bn_stats`](Self::take_bn_stats) under `layer`.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T, layer: usize) -> Result<Var> {
        let (y, cache) = batchnorm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        self.bn_stats.push(BnStats {
            layer,
            mean: cache.mean.clone(),
            var: cache.var.clone(),
        });
        Ok(self.push(y, Op::BatchNormTrain { x, gamma, beta, cache }))
    }

    pub fn batchnorm_infer(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (y, inv_std) = batchnorm_infer(self.value(x), self.value(gamma), self.value(beta), mean, var, eps)?;
        Ok(self.push(
            y,
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
        ))
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (y, cache) = layernorm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, cache }))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { x })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = gelu(self.value(x));
        self.push(y, Op::Gelu { x })
    }

    /// Softmax over the last axis of `[N, C]`, keeping only column `class` (`[N]`).
    pub fn softmax_column(&mut self, x: Var, class: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if xv.rank() != 2 || class >= c {
            return Err(Error::shape("softmax", format!("class {class} on {:?}", xv.shape())));
        }
        let out: Vec<T> = xv.data().chunks(c).map(|row| softmax_row(row)[class]).collect();
        let n = out.len();
        let y = Tensor::new(vec![n], out)?;
        Ok(self.push(y, Op::SoftmaxColumn { x, class }))
    }

    pub fn bce(&mut self, pred: Var, target: &[T], eps: T) -> Result<Var> {
        let l = bce_loss(self.value(pred), target, eps)?;
        Ok(self.push(
            Tensor::scalar(l),
            Op::Bce {
                pred,
                target: target.to_vec(),
                eps,
            },
        ))
    }

    /// `a + b` where `b` is broadcast by repetition over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() % bv.len() != 0 || !av.shape().ends_with(bv.shape()) {
            return Err(Error::shape(
                "add",
                format!("cannot broadcast {:?} onto {:?}", bv.shape(), av.shape()),
            ));
        }
        let bl = bv.len();
        let bd = bv.data();
        let y = Tensor::from_fn(av.shape(), |i| av.data()[i] + bd[i % bl]);
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &[bool]) -> Result<Var> {
        let (y, cache) = attention(self.value(q), self.value(k), self.value(v), heads, mask)?;
        Ok(self.push(
            y,
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask: mask.to_vec(),
                cache,
            },
        ))
    }

    /// Gathers rows of a `[V, D]` table; `None` yields a zero row with no gradient.
    /// Output shape is `leading ++ [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[Option<usize>], leading: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::shape("embedding", format!("table {:?}", tv.shape())));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        if leading.iter().product::<usize>() != ids.len() {
            return Err(Error::shape("embedding", format!("{} ids for shape {leading:?}", ids.len())));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for id in ids {
            match *id {
                Some(i) if i < vocab => out.extend_from_slice(tv.row(i)),
                Some(i) => return Err(Error::shape("embedding", format!("id {i} >= vocab {vocab}"))),
                None => out.extend(std::iter::repeat(T::zero()).take(d)),
            }
        }
        let mut shape = leading.to_vec();
        shape.push(d);
        let y = Tensor::new(shape, out)?;
        Ok(self.push(
            y,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Weighted mean over axis 1 of `[B, L, D]` with per-position weights `[B·L]`.
    pub fn masked_mean(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 || weights.len() != xv.shape()[0] * xv.shape()[1] {
            return Err(Error::shape("masked_mean", format!("x {:?}, {} weights", xv.shape(), weights.len())));
        }
        let (b, l, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            let w = &weights[bi * l..(bi + 1) * l];
            let z: T = w.iter().copied().sum();
            if z <= T::zero() {
                return Err(Error::Empty("masked_mean: no unmasked positions"));
            }
            for (li, &wl) in w.iter().enumerate() {
                if wl == T::zero() {
                    continue;
                }
                let row = &xv.data()[(bi * l + li) * d..][..d];
                for (o, &v) in out[bi * d..(bi + 1) * d].iter_mut().zip(row) {
                    *o += wl / z * v;
                }
            }
        }
        let y = Tensor::new(vec![b, d], out)?;
        Ok(self.push(
            y,
            Op::MaskedMean {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Concatenation along the last axis of rank-2 tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.shape()[0] != rows {
                return Err(Error::shape("concat", format!("part {:?} vs {rows} rows", v.shape())));
            }
            widths.push(v.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let y = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(y, Op::Concat { parts: parts.to_vec() }))
    }

    /// Selects rows of a rank-2 tensor (rows may repeat).
    pub fn gather(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || rows.iter().any(|&r| r >= xv.shape()[0]) || rows.is_empty() {
            return Err(Error::shape("gather", format!("rows {rows:?} from {:?}", xv.shape())));
        }
        let d = xv.shape()[1];
        let out: Vec<T> = rows.iter().flat_map(|&r| xv.row(r).iter().copied()).collect();
        let y = Tensor::new(vec![rows.len(), d], out)?;
        Ok(self.push(y, Op::Gather { x, rows: rows.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every parameter placed on the
    /// tape receives a gradient (zero if it did not influence `loss`).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut out = HashMap::new();
        let mut order = Vec::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                let g = grads[idx].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.insert(id, g);
                order.push(idx);
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            order.push(idx);
            self.backward_node(node, &g, &mut grads)?;
        }
        for (&id, &v) in &self.param_vars {
            out.entry(id)
                .or_insert_with(|| Tensor::zeros(self.value(v).shape()));
        }
        Ok(Gradients {
            params: out,
            visit_order: order,
        })
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, b, stride, padding } => {
                let (dx, dw, db) = conv2d_backward(val(*x), val(*w), *stride, *padding, g)?;
                acc(grads, *x, dx);
                acc(grads, *w, dw);
                acc(grads, *b, db);
            }
            Op::MaxPool { x, argmax } | Op::GlobalMaxPool { x, argmax } => {
                acc(grads, *x, scatter_backward(val(*x).shape(), argmax, g));
            }
            Op::GlobalAvgPool { x } => acc(grads, *x, global_avg_pool_backward(val(*x).shape(), g)),
            Op::BatchNormTrain { x, gamma, beta, cache } => {
                let (dx, dg, db) = batchnorm_train_backward(val(*gamma), cache, g);
                acc(grads, *x, Tensor::new(val(*x).shape().to_vec(), dx)?);
                acc(grads, *gamma, Tensor::new(val(*gamma).shape().to_vec(), dg)?);
                acc(grads, *beta, Tensor::new(val(*beta).shape().to_vec(), db)?);
            }
            Op::BatchNormInfer { x, gamma, beta, mean, inv_std } => {
                let c = inv_std.len();
                let gv = val(*gamma).data();
                let xv = val(*x).data();
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                let mut dx = Vec::with_capacity(xv.len());
                for (i, (&dy, &xi)) in g.data().iter().zip(xv).enumerate() {
                    let ch = i % c;
                    dg[ch] += dy * (xi - mean[ch]) * inv_std[ch];
                    db[ch] += dy;
                    dx.push(dy * gv[ch] * inv_std[ch]);
                }
                acc(grads, *x, Tensor::new(val(*x).shape().to_vec(), dx)?);
                acc(grads, *gamma, Tensor::new(vec![c], dg)?);
                acc(grads, *beta, Tensor::new(vec![c], db)?);
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let (dx, dg, db) = layernorm_backward(val(*gamma), cache, g);
                acc(grads, *x, Tensor::new(val(*x).shape().to_vec(), dx)?);
                acc(grads, *gamma, Tensor::new(val(*gamma).shape().to_vec(), dg)?);
                acc(grads, *beta, Tensor::new(val(*beta).shape().to_vec(), db)?);
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = dense_backward(val(*x), val(*w), g)?;
                acc(grads, *x, dx);
                acc(grads, *w, dw);
                acc(grads, *b, db);
            }
            Op::Relu { x } => {
                let xv = val(*x).data();
                let dx = Tensor::from_fn(g.shape(), |i| if xv[i] > T::zero() { g.data()[i] } else { T::zero() });
                acc(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                let dx = Tensor::from_fn(g.shape(), |i| g.data()[i] * y[i] * (T::one() - y[i]));
                acc(grads, *x, dx);
            }
            Op::Gelu { x } => {
                let xv = val(*x).data();
                let dx = Tensor::from_fn(g.shape(), |i| g.data()[i] * gelu_grad(xv[i]));
                acc(grads, *x, dx);
            }
            Op::SoftmaxColumn { x, class } => {
                let xv = val(*x);
                let c = xv.last_dim();
                let mut dx = Vec::with_capacity(xv.len());
                for (row, &gi) in xv.data().chunks(c).zip(g.data()) {
                    let p = softmax_row(row);
                    for (j, &pj) in p.iter().enumerate() {
                        let delta = if j == *class { T::one() } else { T::zero() };
                        dx.push(gi * p[*class] * (delta - pj));
                    }
                }
                acc(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Bce { pred, target, eps } => {
                acc(grads, *pred, bce_backward(val(*pred), target, *eps, g.data()[0]));
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.clone());
                let bv = val(*b);
                let bl = bv.len();
                let mut db = vec![T::zero(); bl];
                for (i, &v) in g.data().iter().enumerate() {
                    db[i % bl] += v;
                }
                acc(grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
            }
            Op::Attention { q, k, v, heads, mask, cache } => {
                let (dq, dk, dv) = attention_backward(val(*q), val(*k), val(*v), *heads, mask, cache, g)?;
                acc(grads, *q, dq);
                acc(grads, *k, dk);
                acc(grads, *v, dv);
            }
            Op::Embedding { table, ids } => {
                let tv = val(*table);
                let d = tv.shape()[1];
                let mut dt = Tensor::zeros(tv.shape());
                for (r, id) in ids.iter().enumerate() {
                    if let Some(i) = *id {
                        let dst = &mut dt.data_mut()[i * d..(i + 1) * d];
                        for (a, &v) in dst.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *a += v;
                        }
                    }
                }
                acc(grads, *table, dt);
            }
            Op::MaskedMean { x, weights } => {
                let xv = val(*x);
                let (b, l, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let mut dx = vec![T::zero(); xv.len()];
                for bi in 0..b {
                    let w = &weights[bi * l..(bi + 1) * l];
                    let z: T = w.iter().copied().sum();
                    for (li, &wl) in w.iter().enumerate() {
                        for t in 0..d {
                            dx[(bi * l + li) * d + t] = wl / z * g.data()[bi * d + t];
                        }
                    }
                }
                acc(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Concat { parts } => {
                let total = node.value.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.shape()[1];
                    let rows = pv.shape()[0];
                    let dp = Tensor::from_fn(pv.shape(), |i| g.data()[(i / w) * total + off + i % w]);
                    debug_assert_eq!(dp.len(), rows * w);
                    acc(grads, p, dp);
                    off += w;
                }
            }
            Op::Gather { x, rows } => {
                let xv = val(*x);
                let d = xv.shape()[1];
                let mut dx = Tensor::zeros(xv.shape());
                for (r, &src) in rows.iter().enumerate() {
                    for t in 0..d {
                        dx.data_mut()[src * d + t] += g.data()[r * d + t];
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Reshape { x } => {
                acc(grads, *x, g.clone().reshape(val(*x).shape())?);
            }
        }
        Ok(())
    }
}

fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
