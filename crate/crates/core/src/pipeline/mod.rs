//! Corpus loading, per-fold training, prediction and cross-validated
//! evaluation, driven by a [`RunConfig`].

pub mod config;
pub mod manifest;
pub mod synth;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{EmbedderKind, RunConfig};
pub use manifest::{ingest_manifest, Manifest, SubjectRecord};
pub use synth::synth_corpus;

use crate::audio::{
    denoise_mmse_lsa, load_wav, logmel_spectrogram, partition_patches, resample, DenoiseConfig, LogMelPatch,
    ANALYSIS_RATE,
};
use crate::audio_model::{aggregate_audio, train_audio, LabeledPatch, MVGGish, MVGGishConfig};
use crate::container;
use crate::error::{Error, Result};
use crate::eval::{evaluate, kfold_split, validation_split, EvalReport};
use crate::fusion::SubjectPrediction;
use crate::params::{LayerParams, ParamStore};
use crate::tensor::Tensor;
use crate::text::wordvec::{Subwords, DEFAULT_BUCKETS};
use crate::text::{extract_chat, Transcript, Vocab, WordVectorTable};
use crate::text_model::{
    aggregate_text, render_highlights, train_text, training_words, Embedder, FileEmbedder, FreezeFlags, TextModel,
    TextModelConfig, TextSample,
};
use crate::train::{History, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Characters added to every vocabulary so unseen words stay coverable.
const VOCAB_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789'.,;:?!-";

/// Everything the models need for one subject.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub record: SubjectRecord,
    /// `[frames, 64]` log-mel spectrogram of the whole clip.
    pub spectrogram: Option<Tensor<f32>>,
    pub tokens: Option<Vec<String>>,
}

impl SubjectData {
    pub fn id(&self) -> &str {
        &self.record.subject_id
    }

    pub fn is_ad(&self) -> bool {
        self.record.label.is_ad()
    }

    pub fn patches(&self, k: usize) -> Result<Vec<LogMelPatch>> {
        match &self.spectrogram {
            Some(s) => partition_patches(s, k, self.id()),
            None => Ok(Vec::new()),
        }
    }

    pub fn text_samples(&self) -> Result<Vec<TextSample>> {
        match &self.tokens {
            Some(t) => TextSample::from_transcript(self.id(), t.clone(), self.is_ad()),
            None => Ok(Vec::new()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub subjects: Vec<SubjectData>,
}

impl Corpus {
    pub fn labels(&self) -> Vec<bool> {
        self.subjects.iter().map(SubjectData::is_ad).collect()
    }
}

fn clip_spectrogram(path: &Path, denoise: bool) -> Result<Tensor<f32>> {
    let mut clip = load_wav(path)?;
    if clip.sample_rate != ANALYSIS_RATE {
        clip = resample(&clip, ANALYSIS_RATE)?;
    }
    if denoise {
        clip = denoise_mmse_lsa(&clip, &DenoiseConfig::default())?;
    }
    logmel_spectrogram(&clip)
}

fn transcript_tokens(record: &SubjectRecord, cfg: &RunConfig) -> Result<Option<Vec<String>>> {
    let source = cfg.source()?;
    let Some(path) = record.transcript(source) else {
        return Ok(None);
    };
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let text = if path.extension().is_some_and(|e| e == "cha") {
        let speakers = cfg.speakers();
        let refs: Vec<&str> = speakers.iter().map(String::as_str).collect();
        extract_chat(&raw, &refs)
    } else {
        raw
    };
    let t = Transcript::new(&record.subject_id, source, text);
    if t.tokens.is_empty() {
        log::warn!("{}: transcript has no tokens", record.subject_id);
        return Ok(None);
    }
    Ok(Some(t.tokens))
}

/// Reads audio and transcripts for every record in parallel. Spectrograms
/// come from `cached` when it holds the subject.
pub fn load_corpus(manifest: &Manifest, cfg: &RunConfig, cached: Option<&ParamStore<f32>>) -> Result<Corpus> {
    let denoise = cfg.flag("denoise")?;
    let subjects = manifest
        .records
        .par_iter()
        .map(|r| {
            let spectrogram = match (cached.and_then(|c| c.layer(&r.subject_id)), &r.audio_path) {
                (Some(l), _) => Some(l.get("logmel")?.clone()),
                (None, Some(p)) => Some(clip_spectrogram(p, denoise)?),
                (None, None) => None,
            };
            Ok(SubjectData {
                record: r.clone(),
                spectrogram,
                tokens: transcript_tokens(r, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { subjects })
}

/// One `logmel` array per subject, in a weight container.
pub fn features_store(corpus: &Corpus) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    for s in &corpus.subjects {
        if let Some(spec) = &s.spectrogram {
            store.push(LayerParams::new(s.id()).with("logmel", spec.clone()))?;
        }
    }
    Ok(store)
}

/// Deterministic per-purpose seed.
pub fn derive_seed(base: u64, purpose: u64, fold: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(purpose.wrapping_mul(1_000_003))
        .wrapping_add(fold as u64)
}

pub fn train_config(cfg: &RunConfig, seed: u64) -> Result<TrainConfig> {
    Ok(TrainConfig {
        lr: cfg.float("lr")?,
        batch_size: cfg.usize("batch")?,
        max_epochs: cfg.usize("max_epochs")?,
        patience: cfg.usize("patience")?,
        seed,
        bn_momentum: cfg.float("bn_momentum")?,
    })
}

pub fn audio_config(cfg: &RunConfig) -> Result<MVGGishConfig> {
    Ok(match cfg.usize("audio_width_div")? {
        0 | 1 => MVGGishConfig::default(),
        d => MVGGishConfig::narrowed(d),
    })
}

fn labeled_patches(corpus: &Corpus, idx: &[usize], k: usize) -> Result<Vec<LabeledPatch>> {
    let mut out = Vec::new();
    for &i in idx {
        let s = &corpus.subjects[i];
        for patch in s.patches(k)? {
            out.push(LabeledPatch {
                patch,
                label: s.is_ad(),
            });
        }
    }
    Ok(out)
}

fn text_samples(corpus: &Corpus, idx: &[usize]) -> Result<Vec<TextSample>> {
    let mut out = Vec::new();
    for &i in idx {
        out.extend(corpus.subjects[i].text_samples()?);
    }
    Ok(out)
}

/// Splits `train` into fit and early-stopping subjects.
fn fit_val_split(corpus: &Corpus, train: &[usize], cfg: &RunConfig, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    Ok(validation_split(train, &corpus.labels(), cfg.float("val_fraction")?, seed))
}

/// Trains m-VGGish on the patches of subjects `train`.
pub fn fit_audio(corpus: &Corpus, train: &[usize], cfg: &RunConfig, seed: u64) -> Result<(MVGGish<f32>, History)> {
    let k = cfg.segment()?.frames();
    let (fit_idx, val_idx) = fit_val_split(corpus, train, cfg, seed)?;
    let fit = labeled_patches(corpus, &fit_idx, k)?;
    let val = labeled_patches(corpus, &val_idx, k)?;
    let mut model = MVGGish::<f32>::build(audio_config(cfg)?, seed);
    if let Some(p) = cfg.path("backbone") {
        let loaded = model.load_backbone(&container::load(&p)?, true)?;
        log::info!("loaded {} backbone arrays from {}", loaded.len(), p.display());
    }
    model.freeze_backbone = cfg.flag("freeze_backbone")?;
    let history = train_audio(&mut model, &fit, &val, &train_config(cfg, seed)?)?;
    Ok((model, history))
}

fn word_table(cfg: &RunConfig, words: &[String], seed: u64) -> Result<WordVectorTable> {
    let subwords = Subwords {
        buckets: DEFAULT_BUCKETS,
        seed: seed ^ 0x5eed,
    };
    match cfg.path("word_vectors") {
        Some(p) => WordVectorTable::load(&p, Some(subwords)),
        None => WordVectorTable::random(words.iter().map(String::as_str), cfg.usize("word_dim")?, seed),
    }
}

fn freeze_flags(cfg: &RunConfig) -> Result<FreezeFlags> {
    Ok(FreezeFlags {
        word_vectors: cfg.flag("freeze_word_vectors")?,
        cnn: cfg.flag("freeze_cnn")?,
        context: cfg.flag("freeze_context")?,
        sentence: cfg.flag("freeze_sentence")?,
    })
}

fn file_embedder(cfg: &RunConfig) -> Result<Box<dyn Embedder<f32>>> {
    Ok(Box::new(FileEmbedder::load(&cfg.require_path("embeddings")?)?))
}

/// Builds an untrained text model; `words` get trainable vectors.
pub fn build_text_model(
    cfg: &RunConfig,
    words: Vec<String>,
    table: WordVectorTable,
    vocab: Vocab,
    seed: u64,
) -> Result<TextModel<f32>> {
    let tcfg = TextModelConfig::default();
    let mut model = match cfg.embedder()? {
        EmbedderKind::Mini => TextModel::with_mini_encoders(tcfg, words, table, vocab, cfg.usize("encoder_dim")?, seed)?,
        EmbedderKind::File => {
            TextModel::build(tcfg, words, table, vocab, file_embedder(cfg)?, file_embedder(cfg)?, seed)?
        }
    };
    model.freeze = freeze_flags(cfg)?;
    Ok(model)
}

/// Trains the text classifier on the segments of subjects `train`.
pub fn fit_text(corpus: &Corpus, train: &[usize], cfg: &RunConfig, seed: u64) -> Result<(TextModel<f32>, History)> {
    let (fit_idx, val_idx) = fit_val_split(corpus, train, cfg, seed)?;
    let fit = text_samples(corpus, &fit_idx)?;
    let val = text_samples(corpus, &val_idx)?;
    let words = training_words(&fit);
    let table = word_table(cfg, &words, seed)?;
    let vocab = Vocab::build(words.iter().map(String::as_str).chain([VOCAB_ALPHABET]));
    let mut model = build_text_model(cfg, words, table, vocab, seed)?;
    let history = train_text(&mut model, &fit, &val, &train_config(cfg, seed)?)?;
    Ok((model, history))
}

/// Per-subject probabilities; a missing model or input leaves that
/// probability absent. Returns the rendered top-5 highlight report of every
/// subject with a transcript.
pub fn predict_subjects(
    corpus: &Corpus,
    idx: &[usize],
    audio: Option<&MVGGish<f32>>,
    text: Option<&TextModel<f32>>,
    cfg: &RunConfig,
) -> Result<(Vec<SubjectPrediction>, Vec<(String, String)>)> {
    let k = cfg.segment()?.frames();
    let source = cfg.source()?;
    let mut preds = Vec::with_capacity(idx.len());
    let mut highlights = Vec::new();
    for &i in idx {
        let s = &corpus.subjects[i];
        let p_a = match audio {
            Some(m) => {
                let patches = s.patches(k)?;
                if patches.is_empty() {
                    None
                } else {
                    let refs: Vec<&LogMelPatch> = patches.iter().collect();
                    Some(aggregate_audio(&m.predict_patches(&refs)?)?)
                }
            }
            None => None,
        };
        let p_t = match (text, &s.tokens) {
            (Some(m), Some(tokens)) => {
                let pred = m.predict_transcript(&s.text_samples()?)?;
                highlights.push((s.id().to_string(), render_highlights(&pred, tokens)));
                Some(aggregate_text(&pred.segment_probs)?)
            }
            _ => None,
        };
        preds.push(SubjectPrediction {
            subject_id: s.id().to_string(),
            label: s.record.label,
            p_a,
            p_t,
            age: Some(s.record.age),
            gender: Some(s.record.gender),
            source: s.tokens.as_ref().map(|_| source),
        });
    }
    Ok((preds, highlights))
}

/// Fails when a subject appears on both sides of a split.
pub fn assert_disjoint(corpus: &Corpus, train: &[usize], test: &[usize]) -> Result<()> {
    let overlap: Vec<&str> = test
        .iter()
        .filter(|i| train.contains(i))
        .map(|&i| corpus.subjects[i].id())
        .collect();
    if !overlap.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "train/test overlap on subjects {}",
            overlap.join(", ")
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldHistory {
    pub fold: usize,
    pub audio: History,
    pub text: History,
}

pub struct CvOutcome {
    /// Out-of-fold predictions in corpus order.
    pub predictions: Vec<SubjectPrediction>,
    pub folds: Vec<Vec<usize>>,
    pub report: EvalReport,
    pub highlights: Vec<(String, String)>,
    pub histories: Vec<FoldHistory>,
}

/// Stratified k-fold cross-validation of both branches and their fusion.
/// Folds run in parallel on the current rayon pool; results are merged in
/// fold order.
pub fn cross_validate(corpus: &Corpus, cfg: &RunConfig) -> Result<CvOutcome> {
    if let Some(s) = corpus.subjects.iter().find(|s| s.spectrogram.is_none() || s.tokens.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs audio and a transcript for every subject; {} lacks one",
            s.id()
        )));
    }
    let seed = cfg.uint("seed")?;
    let splits = kfold_split(&corpus.labels(), cfg.usize("folds")?, seed)?;
    let per_fold = splits
        .par_iter()
        .map(|f| {
            assert_disjoint(corpus, &f.train, &f.test)?;
            let (audio, ha) = fit_audio(corpus, &f.train, cfg, derive_seed(seed, 1, f.fold))?;
            let (text, ht) = fit_text(corpus, &f.train, cfg, derive_seed(seed, 2, f.fold))?;
            let (preds, hl) = predict_subjects(corpus, &f.test, Some(&audio), Some(&text), cfg)?;
            log::info!("fold {} done ({} test subjects)", f.fold, f.test.len());
            Ok((preds, hl, FoldHistory {
                fold: f.fold,
                audio: ha,
                text: ht,
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut slots: Vec<Option<SubjectPrediction>> = vec![None; corpus.subjects.len()];
    let mut highlights = Vec::new();
    let mut histories = Vec::new();
    for (f, (preds, hl, h)) in splits.iter().zip(per_fold) {
        for (&i, p) in f.test.iter().zip(preds) {
            slots[i] = Some(p);
        }
        highlights.extend(hl);
        histories.push(h);
    }
    let predictions: Vec<SubjectPrediction> = slots.into_iter().map(|p| p.expect("folds cover every subject")).collect();
    let folds: Vec<Vec<usize>> = splits.into_iter().map(|f| f.test).collect();
    let boot = crate::eval::BootstrapConfig {
        resamples: cfg.usize("bootstrap")?,
        seed: derive_seed(seed, 3, 0),
        ..Default::default()
    };
    let report = evaluate(&predictions, &folds, &cfg.weights()?, cfg.float("threshold")?, &boot)?;
    highlights.sort();
    Ok(CvOutcome {
        predictions,
        folds,
        report,
        highlights,
        histories,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AudioMeta {
    config: MVGGishConfig,
    trained_on: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TextMeta {
    config: TextModelConfig,
    words: Vec<String>,
    word_dim: usize,
    subwords: Option<Subwords>,
    embedder: String,
    encoder_dim: usize,
    freeze: FreezeFlags,
    trained_on: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(f, v)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Writes `audio.weights` and `audio.json` under `dir`; returns the files written.
pub fn save_audio_model(dir: &Path, model: &MVGGish<f32>, trained_on: Vec<String>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, m) = (dir.join("audio.weights"), dir.join("audio.json"));
    container::save(&model.params, &w)?;
    write_json(&m, &AudioMeta {
        config: model.config.clone(),
        trained_on,
    })?;
    Ok(vec![w, m])
}

/// Returns the model and the subjects it was trained on.
pub fn load_audio_model(dir: &Path) -> Result<(MVGGish<f32>, Vec<String>)> {
    let meta: AudioMeta = read_json(&dir.join("audio.json"))?;
    let model = MVGGish::from_store(meta.config, container::load(&dir.join("audio.weights"))?)?;
    Ok((model, meta.trained_on))
}

/// Writes parameters, metadata, vocabulary and word vectors under `dir/text`.
pub fn save_text_model(dir: &Path, model: &TextModel<f32>, trained_on: Vec<String>) -> Result<Vec<PathBuf>> {
    let d = dir.join("text");
    std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    let files = [d.join("params.weights"), d.join("meta.json"), d.join("vocab.txt"), d.join("wordvec.txt")];
    container::save(&model.params, &files[0])?;
    write_json(&files[1], &TextMeta {
        config: model.config.clone(),
        words: model.words.clone(),
        word_dim: model.table.dim(),
        subwords: model.table.subwords(),
        embedder: model.context.kind().to_string(),
        encoder_dim: model.context.dim(),
        freeze: model.freeze,
        trained_on,
    })?;
    model.vocab.save(&files[2])?;
    model.table.save(&files[3])?;
    Ok(files.to_vec())
}

/// Rebuilds a saved text model; file embedders are re-read from the
/// `embeddings` key of `cfg`.
pub fn load_text_model(dir: &Path, cfg: &RunConfig) -> Result<(TextModel<f32>, Vec<String>)> {
    let d = dir.join("text");
    let meta: TextMeta = read_json(&d.join("meta.json"))?;
    let vocab = Vocab::load(&d.join("vocab.txt"))?;
    let table = WordVectorTable::load(&d.join("wordvec.txt"), meta.subwords)?;
    let mut model = match meta.embedder.as_str() {
        "file" => TextModel::build(meta.config, meta.words, table, vocab, file_embedder(cfg)?, file_embedder(cfg)?, 0)?,
        _ => TextModel::with_mini_encoders(meta.config, meta.words, table, vocab, meta.encoder_dim, 0)?,
    };
    model.set_params(container::load(&d.join("params.weights"))?)?;
    model.freeze = meta.freeze;
    Ok((model, meta.trained_on))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub file: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// Writes `<file>.meta.json` next to `file`.
pub fn write_sidecar(file: &Path, cfg: &RunConfig) -> Result<()> {
    let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let side = file.with_file_name(format!("{name}.meta.json"));
    write_json(&side, &Sidecar {
        file: name,
        config_hash: cfg.hash(),
        seed: cfg.uint("seed")?,
        version: VERSION.to_string(),
    })
}

/// Writes `bytes` to `path` plus its sidecar.
pub fn write_artifact(path: &Path, bytes: &[u8], cfg: &RunConfig) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_sidecar(path, cfg)
}
