//! Named parameter arrays grouped by layer, plus seeded initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Arrays whose names start with this prefix are buffers, not trainable weights.
const BUFFER_PREFIX: &str = "running_";

pub fn is_trainable(array: &str) -> bool {
    !array.starts_with(BUFFER_PREFIX)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub name: String,
    arrays: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            arrays: Vec::new(),
        }
    }

    pub fn with(mut self, array: &str, t: Tensor<T>) -> Self {
        self.insert(array, t).expect("duplicate array name");
        self
    }

    pub fn insert(&mut self, array: &str, t: Tensor<T>) -> Result<()> {
        if self.arrays.iter().any(|(n, _)| n == array) {
            return Err(Error::InvalidArgument(format!(
                "layer {} already has array {array}",
                self.name
            )));
        }
        self.arrays.push((array.to_string(), t));
        Ok(())
    }

    pub fn get(&self, array: &str) -> Result<&Tensor<T>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == array)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {} has no array {array}", self.name)))
    }

    pub fn get_mut(&mut self, array: &str) -> Result<&mut Tensor<T>> {
        let name = self.name.clone();
        self.arrays
            .iter_mut()
            .find(|(n, _)| n == array)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {name} has no array {array}")))
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.arrays.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.arrays.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn position(&self, array: &str) -> Option<usize> {
        self.arrays.iter().position(|(n, _)| n == array)
    }

    pub fn trainable_count(&self) -> usize {
        self.arrays
            .iter()
            .filter(|(n, _)| is_trainable(n))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Batch-norm layer: gamma=1, beta=0, running mean 0, running var 1.
    pub fn batchnorm(name: &str, channels: usize) -> Self {
        Self::new(name)
            .with("gamma", Tensor::full(&[channels], T::one()))
            .with("beta", Tensor::zeros(&[channels]))
            .with("running_mean", Tensor::zeros(&[channels]))
            .with("running_var", Tensor::full(&[channels], T::one()))
    }

    /// Layer norm: gamma=1, beta=0.
    pub fn layernorm(name: &str, dim: usize) -> Self {
        Self::new(name)
            .with("gamma", Tensor::full(&[dim], T::one()))
            .with("beta", Tensor::zeros(&[dim]))
    }

    pub fn with_values(mut self, gamma: f64, beta: f64) -> Self {
        self.get_mut("gamma").unwrap().data_mut().fill(T::c(gamma));
        self.get_mut("beta").unwrap().data_mut().fill(T::c(beta));
        self
    }

    /// Convolution `[kh,kw,cin,cout]` with He-uniform weights and zero bias.
    pub fn conv(name: &str, kh: usize, kw: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(name)
            .with("weight", he_uniform(&[kh, kw, cin, cout], kh * kw * cin, rng))
            .with("bias", Tensor::zeros(&[cout]))
    }

    /// Dense `[din,dout]` with He-uniform weights and zero bias.
    pub fn dense(name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(name)
            .with("weight", he_uniform(&[din, dout], din, rng))
            .with("bias", Tensor::zeros(&[dout]))
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            name: self.name.clone(),
            arrays: self.arrays.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }
}

/// Uniform in `±sqrt(6 / fan_in)`.
pub fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::c(rng.gen_range(-limit..limit)))
}

/// Small normal-ish init used for embeddings (uniform ±scale).
pub fn uniform<T: Scalar>(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::c(rng.gen_range(-scale..scale)))
}

/// Index of one array within a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub layer: usize,
    pub array: usize,
}

/// Ordered collection of layers; the unit saved to and loaded from weight containers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: LayerParams<T>) -> Result<usize> {
        if self.layers.iter().any(|l| l.name == layer.name) {
            return Err(Error::InvalidArgument(format!("duplicate layer {}", layer.name)));
        }
        self.layers.push(layer);
        Ok(self.layers.len() - 1)
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerParams<T>> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut LayerParams<T>> {
        self.layers.iter_mut().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Resolves `layer/array` to an id.
    pub fn id(&self, layer: &str, array: &str) -> Result<ParamId> {
        let li = self
            .layer_index(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer {layer}")))?;
        let ai = self.layers[li]
            .position(array)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} has no array {array}")))?;
        Ok(ParamId { layer: li, array: ai })
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.layers[id.layer].arrays[id.array].1
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.layers[id.layer].arrays[id.array].1
    }

    pub fn key(&self, id: ParamId) -> String {
        let l = &self.layers[id.layer];
        format!("{}/{}", l.name, l.arrays[id.array].0)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().enumerate().flat_map(|(li, l)| {
            (0..l.arrays.len()).map(move |ai| ParamId { layer: li, array: ai })
        })
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(move |id| is_trainable(&self.layers[id.layer].arrays[id.array].0))
    }

    pub fn trainable_count(&self) -> usize {
        self.layers.iter().map(|l| l.trainable_count()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            layers: self.layers.iter().map(|l| l.cast()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_array_names_rejected() {
        let mut l = LayerParams::<f32>::new("x");
        l.insert("weight", Tensor::zeros(&[1])).unwrap();
        assert!(l.insert("weight", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn he_uniform_bounded_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f32> = he_uniform(&[3, 3, 4, 8], 36, &mut a);
        let y: Tensor<f32> = he_uniform(&[3, 3, 4, 8], 36, &mut b);
        assert_eq!(x, y);
        let lim = (6.0f32 / 36.0).sqrt();
        assert!(x.data().iter().all(|v| v.abs() <= lim));
    }

    #[test]
    fn buffers_not_counted() {
        let l = LayerParams::<f32>::batchnorm("bn", 10);
        assert_eq!(l.trainable_count(), 20);
    }
}
