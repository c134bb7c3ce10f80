//! Three-branch transcript-segment classifier: a CNN over word vectors, a
//! contextual segment embedder and a transcript-level sentence embedder,
//! concatenated into batch norm and a sigmoid unit.

pub mod embedder;
pub mod encoder;
pub mod highlight;

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use embedder::{EmbedQuery, Embedder, FileEmbedder, SentenceEmbedder};
pub use encoder::{EncoderConfig, MiniEncoder};
pub use highlight::{highlight_top5, render_highlights, TextPrediction};

use crate::error::{Error, Result};
use crate::kernels::loss::DEFAULT_BCE_EPS;
use crate::kernels::Padding;
use crate::params::{is_trainable, LayerParams, ParamId, ParamStore};
use crate::tape::{GradTape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::text::wordpiece::DEFAULT_MAX_LEN;
use crate::text::wordvec::DEFAULT_MAX_TOKENS;
use crate::text::{wordpiece_tokenize, SubwordIds, TranscriptSegment, Vocab, WordVectorTable, PAD};
use crate::train::{fit, History, Objective, TrainConfig};

pub const WORDVEC_LAYER: &str = "wordvec";
pub const PROJ_LAYER: &str = "cnn_proj";
pub const HEAD_BN: &str = "head_bn";
pub const HEAD_OUT: &str = "head_out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextModelConfig {
    pub max_tokens: usize,
    pub cnn_widths: Vec<usize>,
    pub cnn_filters: usize,
    pub cnn_out: usize,
    /// Subword length of a segment for the contextual branch.
    pub segment_subwords: usize,
    /// Subword cap for a whole transcript in the sentence branch.
    pub transcript_subwords: usize,
    pub bn_eps: f64,
}

impl Default for TextModelConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            cnn_widths: vec![2, 3, 4],
            cnn_filters: 32,
            cnn_out: 64,
            segment_subwords: DEFAULT_MAX_LEN,
            transcript_subwords: 256,
            bn_eps: 1e-3,
        }
    }
}

impl TextModelConfig {
    fn conv_layer(width: usize) -> String {
        format!("cnn_w{width}")
    }
}

/// Which branches the optimizer may change. The head (batch norm and output
/// unit) always trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeFlags {
    pub word_vectors: bool,
    pub cnn: bool,
    pub context: bool,
    pub sentence: bool,
}

impl Default for FreezeFlags {
    fn default() -> Self {
        Self {
            word_vectors: false,
            cnn: false,
            context: false,
            sentence: true,
        }
    }
}

impl FreezeFlags {
    pub fn all() -> Self {
        Self {
            word_vectors: true,
            cnn: true,
            context: true,
            sentence: true,
        }
    }
}

/// A transcript as the model sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptInput {
    pub id: String,
    pub tokens: Vec<String>,
}

/// One training or inference item: a segment and the transcript it came from.
#[derive(Debug, Clone)]
pub struct TextSample {
    pub segment: TranscriptSegment,
    pub transcript: Arc<TranscriptInput>,
    pub label: bool,
}

impl TextSample {
    /// Every segment of a transcript, labelled with its subject's label.
    pub fn from_transcript(id: &str, tokens: Vec<String>, label: bool) -> Result<Vec<Self>> {
        let segments = crate::text::segment_tokens(&tokens, id)?;
        let transcript = Arc::new(TranscriptInput {
            id: id.to_string(),
            tokens,
        });
        Ok(segments
            .into_iter()
            .map(|segment| Self {
                segment,
                transcript: Arc::clone(&transcript),
                label,
            })
            .collect())
    }
}

pub struct TextModel<T: Scalar = f32> {
    pub config: TextModelConfig,
    pub params: ParamStore<T>,
    /// Words with a trainable row in the `wordvec` table, in row order.
    pub words: Vec<String>,
    word_index: HashMap<String, usize>,
    /// Source of fixed vectors for words outside `words`.
    pub table: WordVectorTable,
    pub vocab: Vocab,
    pub context: Box<dyn Embedder<T>>,
    pub sentence: SentenceEmbedder<T>,
    pub freeze: FreezeFlags,
}

impl<T: Scalar> TextModel<T> {
    /// Builds the model. `words` gets trainable vectors initialized from `table`.
    pub fn build(
        config: TextModelConfig,
        words: Vec<String>,
        table: WordVectorTable,
        vocab: Vocab,
        context: Box<dyn Embedder<T>>,
        sentence: Box<dyn Embedder<T>>,
        seed: u64,
    ) -> Result<Self> {
        if config.max_tokens < crate::text::SEGMENT_LEN {
            return Err(Error::Config(format!("max_tokens {} below segment length", config.max_tokens)));
        }
        if config.cnn_widths.iter().any(|&w| w == 0 || w > config.max_tokens) || config.cnn_widths.is_empty() {
            return Err(Error::Config(format!("bad CNN widths {:?}", config.cnn_widths)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = table.dim();
        let mut params = ParamStore::new();
        let mut rows = Vec::with_capacity(words.len().max(1) * d);
        for w in &words {
            rows.extend(table.lookup(w).into_iter().map(|v| T::c(v as f64)));
        }
        if words.is_empty() {
            rows.resize(d, T::zero());
        }
        let n = words.len().max(1);
        params.push(LayerParams::new(WORDVEC_LAYER).with("table", Tensor::new(vec![n, d], rows)?))?;
        for &w in &config.cnn_widths {
            params.push(LayerParams::conv(&TextModelConfig::conv_layer(w), 1, w, d, config.cnn_filters, &mut rng))?;
        }
        let pooled = config.cnn_widths.len() * config.cnn_filters;
        params.push(LayerParams::dense(PROJ_LAYER, pooled, config.cnn_out, &mut rng))?;
        for l in context.init_params(&mut rng) {
            params.push(l)?;
        }
        for l in sentence.init_params(&mut rng) {
            params.push(l)?;
        }
        let concat = config.cnn_out + context.dim() + sentence.dim();
        params.push(LayerParams::batchnorm(HEAD_BN, concat))?;
        params.push(LayerParams::dense(HEAD_OUT, concat, 1, &mut rng))?;
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Self {
            config,
            params,
            words,
            word_index,
            table,
            vocab,
            context,
            sentence: SentenceEmbedder::new(sentence),
            freeze: FreezeFlags::default(),
        })
    }

    /// Both embedders as [`MiniEncoder`]s of width `dim`.
    pub fn with_mini_encoders(
        config: TextModelConfig,
        words: Vec<String>,
        table: WordVectorTable,
        vocab: Vocab,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut ctx = EncoderConfig::new(vocab.len(), dim, config.segment_subwords);
        let mut sent = EncoderConfig::new(vocab.len(), dim, config.transcript_subwords);
        if dim % ctx.heads != 0 {
            ctx.heads = 1;
            sent.heads = 1;
        }
        let context = Box::new(MiniEncoder::new(ctx, "ctx")?);
        let sentence = Box::new(MiniEncoder::new(sent, "sent")?);
        Self::build(config, words, table, vocab, context, sentence, seed)
    }

    pub fn concat_dim(&self) -> usize {
        self.config.cnn_out + self.context.dim() + self.sentence.dim()
    }

    /// Replaces all arrays, checking names and shapes against the current ones.
    pub fn set_params(&mut self, params: ParamStore<T>) -> Result<()> {
        let mut bad = Vec::new();
        for layer in self.params.layers() {
            for (name, t) in layer.arrays() {
                match params.layer(&layer.name).and_then(|l| l.get(name).ok()) {
                    Some(p) if p.shape() == t.shape() => {}
                    _ => bad.push(format!("{}/{name}", layer.name)),
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::StrictLoad(bad));
        }
        self.params = params;
        self.sentence.invalidate();
        Ok(())
    }

    pub fn segment_subwords(&self, segment: &TranscriptSegment) -> Result<SubwordIds> {
        wordpiece_tokenize(&segment.tokens, &self.vocab, self.config.segment_subwords)
    }

    /// Unpadded subword encoding of a whole transcript (capped in length).
    pub fn transcript_subwords(&self, tokens: &[String]) -> Result<SubwordIds> {
        let full = wordpiece_tokenize(tokens, &self.vocab, self.config.transcript_subwords)?;
        let real = full.mask.iter().filter(|&&m| m).count();
        Ok(SubwordIds {
            ids: full.ids[..real].to_vec(),
            mask: vec![true; real],
        })
    }

    /// `[B, cnn_out]` word-vector CNN embedding of `segments`.
    pub fn cnn_forward(
        &self,
        store: &ParamStore<T>,
        tape: &mut GradTape<T>,
        segments: &[&TranscriptSegment],
    ) -> Result<Var> {
        let (b, m, d) = (segments.len(), self.config.max_tokens, self.table.dim());
        if b == 0 {
            return Err(Error::Empty("segment batch"));
        }
        let mut ids = Vec::with_capacity(b * m);
        let mut oov = vec![T::zero(); b * m * d];
        let mut any_oov = false;
        let mut real = Vec::with_capacity(b);
        for (si, seg) in segments.iter().enumerate() {
            real.push(seg.real.min(m));
            for row in 0..m {
                let id = match seg.tokens.get(row).map(String::as_str) {
                    None | Some(PAD) => None,
                    Some(tok) => match self.word_index.get(tok) {
                        Some(&i) => Some(i),
                        None => {
                            any_oov = true;
                            let at = (si * m + row) * d;
                            for (o, v) in oov[at..at + d].iter_mut().zip(self.table.lookup(tok)) {
                                *o = T::c(v as f64);
                            }
                            None
                        }
                    },
                };
                ids.push(id);
            }
        }
        let table = tape.named_param(store, WORDVEC_LAYER, "table")?;
        let mut e = tape.embedding(table, &ids, &[b, m])?;
        if any_oov {
            let fixed = tape.input(Tensor::new(vec![b, m, d], oov)?);
            e = tape.add(e, fixed)?;
        }
        let x = tape.reshape(e, &[b, 1, m, d])?;
        let mut pooled = Vec::with_capacity(self.config.cnn_widths.len());
        for &w in &self.config.cnn_widths {
            let name = TextModelConfig::conv_layer(w);
            let k = tape.named_param(store, &name, "weight")?;
            let bias = tape.named_param(store, &name, "bias")?;
            let y = tape.conv2d(x, k, bias, 1, Padding::Valid)?;
            let y = tape.relu(y);
            // windows lying wholly inside the real tokens
            let positions = m - w + 1;
            let valid: Vec<bool> = real.iter().flat_map(|&r| (0..positions).map(move |p| p + w <= r)).collect();
            pooled.push(tape.global_max_pool(y, &valid)?);
        }
        let h = match pooled.len() {
            1 => pooled[0],
            _ => tape.concat(&pooled)?,
        };
        let pw = tape.named_param(store, PROJ_LAYER, "weight")?;
        let pb = tape.named_param(store, PROJ_LAYER, "bias")?;
        tape.dense(h, pw, pb)
    }

    /// `[B, concat_dim]` branch outputs `(cnn, context, sentence)` side by side.
    pub fn concat_features(
        &self,
        store: &ParamStore<T>,
        tape: &mut GradTape<T>,
        batch: &[&TextSample],
    ) -> Result<Var> {
        let segments: Vec<&TranscriptSegment> = batch.iter().map(|s| &s.segment).collect();
        let cnn = self.cnn_forward(store, tape, &segments)?;

        let seg_ids: Vec<SubwordIds> = segments.iter().map(|s| self.segment_subwords(s)).collect::<Result<_>>()?;
        let queries: Vec<EmbedQuery> = batch
            .iter()
            .zip(&seg_ids)
            .map(|(s, ids)| EmbedQuery {
                transcript_id: &s.transcript.id,
                start: Some(s.segment.start),
                ids,
            })
            .collect();
        let ctx = self.context.embed(store, tape, &queries)?;

        let mut order: Vec<&Arc<TranscriptInput>> = Vec::new();
        let mut rows = Vec::with_capacity(batch.len());
        for s in batch {
            let at = match order.iter().position(|t| t.id == s.transcript.id) {
                Some(i) => i,
                None => {
                    order.push(&s.transcript);
                    order.len() - 1
                }
            };
            rows.push(at);
        }
        let doc_ids: Vec<SubwordIds> = order.iter().map(|t| self.transcript_subwords(&t.tokens)).collect::<Result<_>>()?;
        let doc_queries: Vec<EmbedQuery> = order
            .iter()
            .zip(&doc_ids)
            .map(|(t, ids)| EmbedQuery {
                transcript_id: &t.id,
                start: None,
                ids,
            })
            .collect();
        let docs = self.sentence.embed(store, tape, &doc_queries, self.freeze.sentence)?;
        let sent = tape.gather(docs, &rows)?;

        tape.concat(&[cnn, ctx, sent])
    }

    /// Segment probabilities `[B]` computed with parameters from `store`.
    pub fn forward_with(
        &self,
        store: &ParamStore<T>,
        tape: &mut GradTape<T>,
        batch: &[&TextSample],
        train: bool,
    ) -> Result<Var> {
        let z = self.concat_features(store, tape, batch)?;
        let g = tape.named_param(store, HEAD_BN, "gamma")?;
        let be = tape.named_param(store, HEAD_BN, "beta")?;
        let eps = T::c(self.config.bn_eps);
        let z = match train {
            true => {
                let idx = store.layer_index(HEAD_BN).ok_or_else(|| Error::Config("missing head_bn".into()))?;
                tape.batchnorm_train(z, g, be, eps, idx)?
            }
            false => {
                let l = store.layer(HEAD_BN).ok_or_else(|| Error::Config("missing head_bn".into()))?;
                let mean = l.get("running_mean")?.data().to_vec();
                let var = l.get("running_var")?.data().to_vec();
                tape.batchnorm_infer(z, g, be, &mean, &var, eps)?
            }
        };
        let w = tape.named_param(store, HEAD_OUT, "weight")?;
        let b = tape.named_param(store, HEAD_OUT, "bias")?;
        let logit = tape.dense(z, w, b)?;
        let p = tape.sigmoid(logit);
        tape.reshape(p, &[batch.len()])
    }

    /// Inference-mode segment probabilities.
    pub fn classify_segments(&self, samples: &[&TextSample]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(64) {
            let mut tape = GradTape::new();
            let p = self.forward_with(&self.params, &mut tape, chunk, false)?;
            out.extend(tape.value(p).data().iter().map(|v| v.to_f64().unwrap()));
        }
        Ok(out)
    }

    pub fn classify_segment(&self, sample: &TextSample) -> Result<f64> {
        Ok(self.classify_segments(&[sample])?[0])
    }

    /// Per-transcript prediction from all of its segments.
    pub fn predict_transcript(&self, samples: &[TextSample]) -> Result<TextPrediction> {
        let first = samples.first().ok_or(Error::Empty("transcript segments"))?;
        let refs: Vec<&TextSample> = samples.iter().collect();
        let probs = self.classify_segments(&refs)?;
        TextPrediction::new(
            &first.transcript.id,
            samples.iter().map(|s| s.segment.clone()).collect(),
            probs,
        )
    }

    fn layer_frozen(&self, layer: &str) -> bool {
        let f = self.freeze;
        if layer == WORDVEC_LAYER {
            return f.word_vectors;
        }
        if layer.starts_with("cnn_") {
            return f.cnn;
        }
        if self.context.layer_names().iter().any(|l| l == layer) {
            return f.context;
        }
        if self.sentence.inner.layer_names().iter().any(|l| l == layer) {
            return f.sentence;
        }
        false
    }
}

/// Sorted distinct non-PAD tokens of `samples`.
pub fn training_words(samples: &[TextSample]) -> Vec<String> {
    let mut w: Vec<String> = samples
        .iter()
        .flat_map(|s| s.segment.real_tokens().iter().cloned())
        .collect();
    w.sort_unstable();
    w.dedup();
    w
}

/// Mean of segment probabilities.
pub fn aggregate_text(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("no transcript segments"));
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

impl Objective for TextModel<f32> {
    type Sample = TextSample;

    fn store(&self) -> &ParamStore<f32> {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    fn loss(&mut self, tape: &mut GradTape<f32>, batch: &[&TextSample], train: bool) -> Result<Var> {
        let p = self.forward_with(&self.params, tape, batch, train)?;
        let target: Vec<f32> = batch.iter().map(|s| if s.label { 1.0 } else { 0.0 }).collect();
        tape.bce(p, &target, DEFAULT_BCE_EPS as f32)
    }

    fn label(sample: &TextSample) -> bool {
        sample.label
    }

    fn is_updated(&self, id: ParamId) -> bool {
        let layer = &self.params.layers()[id.layer];
        let array = layer.arrays().nth(id.array).map(|a| a.0).unwrap_or("");
        is_trainable(array) && !self.layer_frozen(&layer.name)
    }

    fn on_epoch_start(&mut self, _epoch: usize) {
        self.sentence.invalidate();
    }
}

/// Fits the segment classifier on subject labels with early stopping on `val`.
pub fn train_text(
    model: &mut TextModel<f32>,
    train: &[TextSample],
    val: &[TextSample],
    cfg: &TrainConfig,
) -> Result<History> {
    let h = fit(model, train, val, cfg)?;
    model.sentence.invalidate();
    Ok(h)
}
