//! m-VGGish: the VGGish convolutional stack with its fully connected layers
//! replaced by batch norm, global average pooling and a small two-class head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::patches::LogMelPatch;
use crate::audio::MEL_BANDS;
use crate::error::{Error, Result};
use crate::kernels::loss::DEFAULT_BCE_EPS;
use crate::kernels::Padding;
use crate::params::{is_trainable, LayerParams, ParamId, ParamStore};
use crate::tape::{GradTape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::train::{fit, History, Objective, TrainConfig};

/// Output column holding the AD probability (columns are `[AD, HC]`).
pub const AD_CLASS: usize = 0;

/// Smallest patch length that survives the four 2×2 pools.
pub const MIN_FRAMES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MVGGishConfig {
    /// Output channels of each conv, grouped by pooling block.
    pub blocks: Vec<Vec<usize>>,
    pub hidden: usize,
    pub bn_eps: f64,
}

impl Default for MVGGishConfig {
    fn default() -> Self {
        Self {
            blocks: vec![vec![64], vec![128], vec![256, 256], vec![512, 512]],
            hidden: 512,
            bn_eps: 1e-3,
        }
    }
}

impl MVGGishConfig {
    /// Same topology with every width divided by `div`.
    pub fn narrowed(div: usize) -> Self {
        let full = Self::default();
        Self {
            blocks: full
                .blocks
                .iter()
                .map(|b| b.iter().map(|&c| (c / div).max(1)).collect())
                .collect(),
            hidden: (full.hidden / div).max(1),
            bn_eps: full.bn_eps,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        *self.blocks.last().and_then(|b| b.last()).unwrap_or(&1)
    }

    pub fn min_frames(&self) -> usize {
        1 << self.blocks.len()
    }

    /// `(conv layer, bn layer, cin, cout)` for every conv in order.
    pub fn conv_layers(&self) -> Vec<(String, String, usize, usize)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for (b, block) in self.blocks.iter().enumerate() {
            for (j, &cout) in block.iter().enumerate() {
                let suffix = match block.len() {
                    1 => format!("{}", b + 1),
                    _ => format!("{}_{}", b + 1, j + 1),
                };
                out.push((format!("conv{suffix}"), format!("bn{suffix}"), cin, cout));
                cin = cout;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MVGGish<T = f32> {
    pub config: MVGGishConfig,
    pub params: ParamStore<T>,
    /// Train only batch-norm affine parameters and the head; running stats stay fixed.
    pub freeze_backbone: bool,
}

impl<T: Scalar> MVGGish<T> {
    pub fn build(config: MVGGishConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (conv, bn, cin, cout) in config.conv_layers() {
            params.push(LayerParams::conv(&conv, 3, 3, cin, cout, &mut rng)).unwrap();
            params.push(LayerParams::batchnorm(&bn, cout)).unwrap();
        }
        let emb = config.embedding_dim();
        params.push(LayerParams::dense("fc1", emb, config.hidden, &mut rng)).unwrap();
        params.push(LayerParams::dense("fc2", config.hidden, 2, &mut rng)).unwrap();
        Self {
            config,
            params,
            freeze_backbone: false,
        }
    }

    /// Wraps an existing parameter set, checking it matches `config`.
    pub fn from_store(config: MVGGishConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Self::build(config.clone(), 0);
        let mut missing = Vec::new();
        for layer in reference.params.layers() {
            for (name, t) in layer.arrays() {
                let key = format!("{}/{name}", layer.name);
                match params.layer(&layer.name).and_then(|l| l.get(name).ok()) {
                    Some(p) if p.shape() == t.shape() => {}
                    _ => missing.push(key),
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::StrictLoad(missing));
        }
        Ok(Self {
            config,
            params,
            freeze_backbone: false,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Copies matching conv (and any other matching) arrays from `file`.
    /// In strict mode a missing conv array or any shape conflict is an error
    /// listing every offending `layer/array`, and nothing is changed.
    pub fn load_backbone(&mut self, file: &ParamStore<T>, strict: bool) -> Result<Vec<String>> {
        let conv_names: Vec<String> = self.config.conv_layers().into_iter().map(|c| c.0).collect();
        let mut bad = Vec::new();
        let mut updates = Vec::new();
        for layer in self.params.layers() {
            let src = file.layer(&layer.name);
            for (name, t) in layer.arrays() {
                let key = format!("{}/{name}", layer.name);
                match src.and_then(|l| l.get(name).ok()) {
                    Some(s) if s.shape() == t.shape() => updates.push((layer.name.clone(), name.to_string(), s.clone())),
                    Some(_) => bad.push(key),
                    None if conv_names.contains(&layer.name) && strict => bad.push(key),
                    None => {}
                }
            }
        }
        if strict && !bad.is_empty() {
            return Err(Error::StrictLoad(bad));
        }
        let mut loaded = Vec::new();
        for (layer, name, t) in updates {
            *self.params.layer_mut(&layer).unwrap().get_mut(&name)? = t;
            loaded.push(format!("{layer}/{name}"));
        }
        Ok(loaded)
    }

    /// Global-pooled embedding `[N, C]` of a `[N, k, 64, 1]` input.
    pub fn embed(&self, tape: &mut GradTape<T>, x: Var, train: bool) -> Result<Var> {
        let eps = T::c(self.config.bn_eps);
        let mut h = x;
        let layers = self.config.conv_layers();
        let mut li = 0;
        for block in &self.config.blocks {
            for _ in block {
                let (conv, bn, _, _) = &layers[li];
                li += 1;
                let w = tape.named_param(&self.params, conv, "weight")?;
                let b = tape.named_param(&self.params, conv, "bias")?;
                h = tape.conv2d(h, w, b, 1, Padding::Same)?;
                let g = tape.named_param(&self.params, bn, "gamma")?;
                let be = tape.named_param(&self.params, bn, "beta")?;
                h = match train {
                    true => {
                        let idx = self.params.layer_index(bn).unwrap();
                        tape.batchnorm_train(h, g, be, eps, idx)?
                    }
                    false => {
                        let l = self.params.layer(bn).unwrap();
                        let mean = l.get("running_mean")?.data().to_vec();
                        let var = l.get("running_var")?.data().to_vec();
                        tape.batchnorm_infer(h, g, be, &mean, &var, eps)?
                    }
                };
                h = tape.relu(h);
            }
            h = tape.maxpool2d(h, 2)?;
        }
        tape.global_avg_pool(h)
    }

    /// Two-class logits `[N, 2]`.
    pub fn logits(&self, tape: &mut GradTape<T>, x: Var, train: bool) -> Result<Var> {
        let e = self.embed(tape, x, train)?;
        let w1 = tape.named_param(&self.params, "fc1", "weight")?;
        let b1 = tape.named_param(&self.params, "fc1", "bias")?;
        let h = tape.dense(e, w1, b1)?;
        let h = tape.relu(h);
        let w2 = tape.named_param(&self.params, "fc2", "weight")?;
        let b2 = tape.named_param(&self.params, "fc2", "bias")?;
        tape.dense(h, w2, b2)
    }

    /// AD probabilities `[N]` for a `[N, k, 64, 1]` input.
    pub fn probabilities(&self, tape: &mut GradTape<T>, x: Var, train: bool) -> Result<Var> {
        let z = self.logits(tape, x, train)?;
        tape.softmax_column(z, AD_CLASS)
    }

    pub fn batch_input(&self, patches: &[&LogMelPatch]) -> Result<Tensor<T>> {
        let k = patches.first().ok_or(Error::Empty("patch batch"))?.k();
        if k < self.config.min_frames() {
            return Err(Error::InvalidArgument(format!(
                "patch has {k} frames; needs at least {}",
                self.config.min_frames()
            )));
        }
        let mut data = Vec::with_capacity(patches.len() * k * MEL_BANDS);
        for p in patches {
            if p.k() != k {
                return Err(Error::shape("audio batch", format!("mixed patch lengths {k} and {}", p.k())));
            }
            data.extend(p.frames.data().iter().map(|&v| T::c(v as f64)));
        }
        Tensor::new(vec![patches.len(), k, MEL_BANDS, 1], data)
    }

    /// Inference-mode AD probability for each patch (batched by length).
    pub fn predict_patches(&self, patches: &[&LogMelPatch]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; patches.len()];
        let mut idx: Vec<usize> = (0..patches.len()).collect();
        idx.sort_by_key(|&i| patches[i].k());
        for group in idx.chunk_by(|&a, &b| patches[a].k() == patches[b].k()) {
            for chunk in group.chunks(32) {
                let batch: Vec<&LogMelPatch> = chunk.iter().map(|&i| patches[i]).collect();
                let mut tape = GradTape::new();
                let x = tape.input(self.batch_input(&batch)?);
                let p = self.probabilities(&mut tape, x, false)?;
                for (&i, v) in chunk.iter().zip(tape.value(p).data()) {
                    out[i] = v.to_f64().unwrap();
                }
            }
        }
        Ok(out)
    }

    pub fn predict_segment(&self, patch: &LogMelPatch) -> Result<f64> {
        Ok(self.predict_patches(&[patch])?[0])
    }
}

/// Mean of per-segment probabilities.
pub fn aggregate_audio(predictions: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("no audio segments (clip shorter than one patch)"));
    }
    Ok(predictions.iter().sum::<f64>() / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioPrediction {
    pub clip_id: String,
    pub patch_probs: Vec<f64>,
    pub p_a: f64,
}

impl AudioPrediction {
    pub fn from_patches(model: &MVGGish<f32>, clip_id: &str, patches: &[LogMelPatch]) -> Result<Self> {
        let refs: Vec<&LogMelPatch> = patches.iter().collect();
        let patch_probs = model.predict_patches(&refs)?;
        let p_a = aggregate_audio(&patch_probs)?;
        Ok(Self {
            clip_id: clip_id.to_string(),
            patch_probs,
            p_a,
        })
    }
}

/// A patch labelled with its subject's diagnosis (`true` = AD).
#[derive(Debug, Clone)]
pub struct LabeledPatch {
    pub patch: LogMelPatch,
    pub label: bool,
}

impl Objective for MVGGish<f32> {
    type Sample = LabeledPatch;

    fn store(&self) -> &ParamStore<f32> {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    fn loss(&mut self, tape: &mut GradTape<f32>, batch: &[&LabeledPatch], train: bool) -> Result<Var> {
        let patches: Vec<&LogMelPatch> = batch.iter().map(|s| &s.patch).collect();
        let x = tape.input(self.batch_input(&patches)?);
        let p = self.probabilities(tape, x, train)?;
        let target: Vec<f32> = batch.iter().map(|s| if s.label { 1.0 } else { 0.0 }).collect();
        tape.bce(p, &target, DEFAULT_BCE_EPS as f32)
    }

    fn label(sample: &LabeledPatch) -> bool {
        sample.label
    }

    fn is_updated(&self, id: ParamId) -> bool {
        let layer = &self.params.layers()[id.layer];
        let array = layer.arrays().nth(id.array).map(|a| a.0).unwrap_or("");
        if !is_trainable(array) {
            return false;
        }
        !self.freeze_backbone || layer.name.starts_with("bn") || layer.name.starts_with("fc")
    }

    fn updates_running_stats(&self) -> bool {
        !self.freeze_backbone
    }
}

/// Fits the classifier on patch-level labels with early stopping on `val`.
pub fn train_audio(
    model: &mut MVGGish<f32>,
    train: &[LabeledPatch],
    val: &[LabeledPatch],
    cfg: &TrainConfig,
) -> Result<History> {
    fit(model, train, val, cfg)
}
