//! Flat `key = value` run configuration.
//!
//! Files hold one `key = value` per line, `#` comments and `include PATH`
//! lines (relative to the including file). Later lines win. Environment
//! variables `ADSCREEN_<KEY>` (key upper-cased) override files; command-line
//! flags override both.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::audio::SegmentKind;
use crate::error::{Error, Result};
use crate::text::TranscriptSource;

pub const ENV_PREFIX: &str = "ADSCREEN_";

/// Every accepted key with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("manifest", "", "subject manifest CSV"),
    ("out", "out", "output directory"),
    ("model_dir", "", "trained model directory (default: <out>/model)"),
    ("features", "", "cached spectrogram container written by `features` (default: <out>/features.weights)"),
    ("predictions", "", "predictions CSV read by `fuse` (default: <out>/predictions.csv)"),
    ("segment", "short", "audio patch length: short (96 frames) or long (496 frames)"),
    ("source", "manual", "transcript column: manual or asr"),
    ("speakers", "PAR", "CHAT speaker tiers kept from .cha transcripts, comma separated"),
    ("weights", "0,1,1.5,2,1e14", "fusion weights w in (p_a + w p_t)/(1 + w)"),
    ("threshold", "0.5", "AD iff probability >= threshold"),
    ("seed", "0", "master seed"),
    ("jobs", "0", "worker threads (0 = all cores, 1 = serial)"),
    ("folds", "10", "cross-validation folds"),
    ("val_fraction", "0.1", "share of each training fold held out for early stopping"),
    ("bootstrap", "1000", "bootstrap resamples for confidence intervals"),
    ("denoise", "false", "apply log-spectral amplitude enhancement before features"),
    ("lr", "1e-6", "Adam learning rate"),
    ("batch", "32", "mini-batch size"),
    ("patience", "30", "early-stopping patience in epochs"),
    ("max_epochs", "200", "epoch cap"),
    ("bn_momentum", "0.99", "batch-norm running-statistics momentum"),
    ("audio_width_div", "1", "divide every m-VGGish width by this (1 = full model)"),
    ("backbone", "", "pre-trained backbone weights to load before training"),
    ("freeze_backbone", "false", "train only batch norm and the dense head of m-VGGish"),
    ("embedder", "mini", "contextual and sentence embedders: mini or file"),
    ("embeddings", "", "precomputed embedding file used when embedder = file"),
    ("encoder_dim", "128", "MiniEncoder width"),
    ("word_vectors", "", "word vector text file (count dim header); random vectors when empty"),
    ("word_dim", "300", "dimension of random word vectors"),
    ("freeze_word_vectors", "false", "keep word vectors fixed"),
    ("freeze_cnn", "false", "keep the CNN branch fixed"),
    ("freeze_context", "false", "keep the contextual encoder fixed"),
    ("freeze_sentence", "true", "keep the sentence encoder fixed (embeddings cached)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    Mini,
    File,
}

/// Resolved configuration; build with [`RunConfig::resolve`] or
/// [`RunConfig::default`] plus [`RunConfig::set`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

impl RunConfig {
    /// Defaults, then the optional file, then environment overrides.
    pub fn resolve(file: Option<&Path>) -> Result<Self> {
        let mut c = Self::default();
        if let Some(f) = file {
            c.load_file(f, 0)?;
        }
        c.apply_env(std::env::vars())?;
        Ok(c)
    }

    /// Sets a key after validating its value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if !self.values.contains_key(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        let old = self.values.insert(key.to_string(), value.trim().to_string());
        if let Err(e) = self.validate_key(key) {
            self.values.insert(key.to_string(), old.unwrap());
            return Err(e);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn load_file(&mut self, path: &Path, depth: usize) -> Result<()> {
        if depth > 16 {
            return Err(Error::Config(format!("include nesting too deep at {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| Error::Config(format!("{}:{}: {e}", path.display(), i + 1));
            if let Some(rest) = line.strip_prefix("include ") {
                let inc = PathBuf::from(rest.trim());
                let inc = if inc.is_absolute() { inc } else { dir.join(inc) };
                self.load_file(&inc, depth + 1).map_err(at)?;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(Error::Config(format!("expected key = value, got {line:?}"))))?;
            self.set(k, v).map_err(at)?;
        }
        Ok(())
    }

    /// Applies `ADSCREEN_<KEY>` variables; unknown suffixes are rejected.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (name, value) in vars {
            if let Some(k) = name.strip_prefix(ENV_PREFIX) {
                self.set(&k.to_ascii_lowercase(), &value)
                    .map_err(|e| Error::Config(format!("environment {name}: {e}")))?;
            }
        }
        Ok(())
    }

    fn validate_key(&self, key: &str) -> Result<()> {
        match key {
            "segment" => self.segment().map(|_| ()),
            "source" => self.source().map(|_| ()),
            "weights" => self.weights().map(|_| ()),
            "embedder" => self.embedder().map(|_| ()),
            "threshold" | "val_fraction" | "lr" | "bn_momentum" => self.float(key).map(|_| ()),
            "seed" | "jobs" | "folds" | "bootstrap" | "batch" | "patience" | "max_epochs" | "audio_width_div"
            | "encoder_dim" | "word_dim" => self.uint(key).map(|_| ()),
            "denoise" | "freeze_backbone" | "freeze_word_vectors" | "freeze_cnn" | "freeze_context"
            | "freeze_sentence" => self.flag(key).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn float(&self, key: &str) -> Result<f64> {
        let v = self.get(key);
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::Config(format!("{key}: expected a number, got {v:?}")))
    }

    pub fn uint(&self, key: &str) -> Result<u64> {
        let v = self.get(key);
        v.parse().map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        Ok(self.uint(key)? as usize)
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        parse_bool(key, self.get(key))
    }

    /// `None` when the key is empty.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?} (set it in the config, with --set or via {ENV_PREFIX}{})", key.to_ascii_uppercase())))
    }

    pub fn segment(&self) -> Result<SegmentKind> {
        SegmentKind::parse(self.get("segment"))
            .ok_or_else(|| Error::Config(format!("segment: expected short or long, got {:?}", self.get("segment"))))
    }

    pub fn source(&self) -> Result<TranscriptSource> {
        self.get("source").parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        let ws: Vec<f64> = self
            .get("weights")
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| *x >= 0.0)
                    .ok_or_else(|| Error::Config(format!("weights: {w:?} is not a non-negative number")))
            })
            .collect::<Result<_>>()?;
        if ws.is_empty() {
            return Err(Error::Config("weights: at least one weight is required".into()));
        }
        Ok(ws)
    }

    pub fn embedder(&self) -> Result<EmbedderKind> {
        match self.get("embedder") {
            "mini" => Ok(EmbedderKind::Mini),
            "file" => Ok(EmbedderKind::File),
            v => Err(Error::Config(format!("embedder: expected mini or file, got {v:?}"))),
        }
    }

    pub fn speakers(&self) -> Vec<String> {
        self.get("speakers")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn model_dir(&self) -> PathBuf {
        self.path("model_dir").unwrap_or_else(|| self.out_dir().join("model"))
    }

    /// Canonical `key = value` listing, one per line in key order.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`Self::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
