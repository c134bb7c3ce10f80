//! Small post-LN transformer encoder standing in for a pre-trained one.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{uniform, LayerParams, ParamStore};
use crate::tape::{GradTape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Sequence length the positional table covers.
    pub max_len: usize,
    pub ln_eps: f64,
}

impl EncoderConfig {
    pub fn new(vocab: usize, dim: usize, max_len: usize) -> Self {
        Self {
            vocab,
            dim,
            layers: 2,
            heads: 4,
            ffn: 4 * dim,
            max_len,
            ln_eps: 1e-5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.dim == 0 || self.max_len == 0 || self.heads == 0 || self.ffn == 0 {
            return Err(Error::Config("encoder extents must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        Ok(())
    }
}

fn glorot<T: Scalar>(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    uniform(&[din, dout], (6.0 / (din + dout) as f64).sqrt(), rng)
}

/// Encoder whose arrays live in a shared [`ParamStore`] under `prefix_*` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniEncoder {
    pub config: EncoderConfig,
    pub prefix: String,
}

impl MiniEncoder {
    pub fn new(config: EncoderConfig, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            prefix: prefix.into(),
        })
    }

    fn embed_layer(&self) -> String {
        format!("{}_embed", self.prefix)
    }

    fn block_layer(&self, i: usize) -> String {
        format!("{}_block{}", self.prefix, i + 1)
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut v = vec![self.embed_layer()];
        v.extend((0..self.config.layers).map(|i| self.block_layer(i)));
        v
    }

    pub fn init_params<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Vec<LayerParams<T>> {
        let c = &self.config;
        let (d, f) = (c.dim, c.ffn);
        let mut out = vec![LayerParams::new(self.embed_layer())
            .with("tokens", uniform(&[c.vocab, d], 0.1, rng))
            .with("positions", uniform(&[c.max_len, d], 0.1, rng))];
        for i in 0..c.layers {
            let mut l = LayerParams::new(self.block_layer(i));
            for name in ["q", "k", "v", "o"] {
                l.insert(&format!("w{name}"), glorot(d, d, rng)).unwrap();
                l.insert(&format!("b{name}"), Tensor::zeros(&[d])).unwrap();
            }
            l.insert("ln1_gamma", Tensor::full(&[d], T::one())).unwrap();
            l.insert("ln1_beta", Tensor::zeros(&[d])).unwrap();
            l.insert("w1", glorot(d, f, rng)).unwrap();
            l.insert("b1", Tensor::zeros(&[f])).unwrap();
            l.insert("w2", glorot(f, d, rng)).unwrap();
            l.insert("b2", Tensor::zeros(&[d])).unwrap();
            l.insert("ln2_gamma", Tensor::full(&[d], T::one())).unwrap();
            l.insert("ln2_beta", Tensor::zeros(&[d])).unwrap();
            out.push(l);
        }
        out
    }

    /// Final token states `[B, L, dim]` for `batch × L` ids; `mask` marks real positions.
    pub fn encode<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut GradTape<T>,
        ids: &[usize],
        mask: &[bool],
        batch: usize,
    ) -> Result<Var> {
        let c = &self.config;
        if batch == 0 || ids.len() % batch != 0 || ids.len() != mask.len() {
            return Err(Error::shape("encoder", format!("{} ids, {} mask, batch {batch}", ids.len(), mask.len())));
        }
        let l = ids.len() / batch;
        if l > c.max_len {
            return Err(Error::shape("encoder", format!("sequence length {l} exceeds {}", c.max_len)));
        }
        let emb = self.embed_layer();
        let table = tape.named_param(store, &emb, "tokens")?;
        let some: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        let x = tape.embedding(table, &some, &[batch, l])?;
        let pos = tape.named_param(store, &emb, "positions")?;
        let pos = match l == c.max_len {
            true => pos,
            false => {
                let rows: Vec<usize> = (0..l).collect();
                tape.gather(pos, &rows)?
            }
        };
        let mut h = tape.add(x, pos)?;
        let eps = T::c(c.ln_eps);
        for i in 0..c.layers {
            let name = self.block_layer(i);
            let mut p = |a: &str| tape_param(tape, store, &name, a);
            let (wq, bq, wk, bk) = (p("wq")?, p("bq")?, p("wk")?, p("bk")?);
            let (wv, bv, wo, bo) = (p("wv")?, p("bv")?, p("wo")?, p("bo")?);
            let (g1, be1, w1, b1) = (p("ln1_gamma")?, p("ln1_beta")?, p("w1")?, p("b1")?);
            let (w2, b2, g2, be2) = (p("w2")?, p("b2")?, p("ln2_gamma")?, p("ln2_beta")?);
            let q = tape.dense(h, wq, bq)?;
            let k = tape.dense(h, wk, bk)?;
            let v = tape.dense(h, wv, bv)?;
            let a = tape.attention(q, k, v, c.heads, mask)?;
            let a = tape.dense(a, wo, bo)?;
            let r = tape.add(h, a)?;
            let r = tape.layernorm(r, g1, be1, eps)?;
            let f = tape.dense(r, w1, b1)?;
            let f = tape.gelu(f);
            let f = tape.dense(f, w2, b2)?;
            let r2 = tape.add(r, f)?;
            h = tape.layernorm(r2, g2, be2, eps)?;
        }
        Ok(h)
    }

    /// Mean of final states over masked-in positions, `[B, dim]`.
    pub fn pooled<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut GradTape<T>,
        ids: &[usize],
        mask: &[bool],
        batch: usize,
    ) -> Result<Var> {
        let h = self.encode(store, tape, ids, mask, batch)?;
        let w: Vec<T> = mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect();
        tape.masked_mean(h, &w)
    }
}

fn tape_param<T: Scalar>(tape: &mut GradTape<T>, store: &ParamStore<T>, layer: &str, array: &str) -> Result<Var> {
    tape.named_param(store, layer, array)
}
