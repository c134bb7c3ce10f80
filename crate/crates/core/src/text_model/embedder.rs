//! Segment and transcript embedders behind one interface.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use rand_chacha::ChaCha8Rng;

use super::encoder::MiniEncoder;
use crate::error::{Error, Result};
use crate::params::{LayerParams, ParamStore};
use crate::tape::{GradTape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::text::SubwordIds;

/// What an embedder is asked to embed: a segment (`start = Some`) or a whole
/// transcript (`start = None`), with its subword encoding.
#[derive(Debug, Clone, Copy)]
pub struct EmbedQuery<'a> {
    pub transcript_id: &'a str,
    pub start: Option<usize>,
    pub ids: &'a SubwordIds,
}

pub trait Embedder<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    /// `[B, dim]` embeddings placed on `tape`.
    fn embed(&self, store: &ParamStore<T>, tape: &mut GradTape<T>, batch: &[EmbedQuery]) -> Result<Var>;

    /// Parameter layers the embedder reads from the model's store.
    fn layer_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn init_params(&self, _rng: &mut ChaCha8Rng) -> Vec<LayerParams<T>> {
        Vec::new()
    }

    fn kind(&self) -> &'static str;
}

impl<T: Scalar> Embedder<T> for MiniEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, store: &ParamStore<T>, tape: &mut GradTape<T>, batch: &[EmbedQuery]) -> Result<Var> {
        let len = batch.first().ok_or(Error::Empty("embedding batch"))?.ids.ids.len();
        let mut ids = Vec::with_capacity(batch.len() * len);
        let mut mask = Vec::with_capacity(batch.len() * len);
        for q in batch {
            if q.ids.ids.len() != len {
                return Err(Error::shape("encoder batch", format!("lengths {len} and {}", q.ids.ids.len())));
            }
            ids.extend_from_slice(&q.ids.ids);
            mask.extend_from_slice(&q.ids.mask);
        }
        self.pooled(store, tape, &ids, &mask, batch.len())
    }

    fn layer_names(&self) -> Vec<String> {
        MiniEncoder::layer_names(self)
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<LayerParams<T>> {
        MiniEncoder::init_params(self, rng)
    }

    fn kind(&self) -> &'static str {
        "mini"
    }
}

const EMBED_MAGIC: &str = "adscreen-embeddings";

/// Precomputed vectors keyed by `(transcript id, segment start)`; sentence-level
/// vectors use start `-1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileEmbedder {
    dim: usize,
    vectors: HashMap<(String, i64), Vec<f32>>,
}

fn key_start(start: Option<usize>) -> i64 {
    start.map(|s| s as i64).unwrap_or(-1)
}

impl FileEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn insert(&mut self, transcript_id: &str, start: Option<usize>, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim || transcript_id.contains(char::is_whitespace) || transcript_id.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "embedding for {transcript_id:?}: {} values, dim {}",
                v.len(),
                self.dim
            )));
        }
        self.vectors.insert((transcript_id.to_string(), key_start(start)), v);
        Ok(())
    }

    pub fn get(&self, transcript_id: &str, start: Option<usize>) -> Result<&[f32]> {
        let key = (transcript_id.to_string(), key_start(start));
        self.vectors
            .get(&key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(format!("{transcript_id}@{}", key.1)))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Header line `adscreen-embeddings <dim> <count>`, then per record a line
    /// `<transcript id> <start>` followed by `dim` little-endian f32 values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut keys: Vec<&(String, i64)> = self.vectors.keys().collect();
        keys.sort();
        let mut out = format!("{EMBED_MAGIC} {} {}\n", self.dim, keys.len()).into_bytes();
        for k in keys {
            out.extend_from_slice(format!("{} {}\n", k.0, k.1).as_bytes());
            for v in &self.vectors[k] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(f);
        let bad = |m: &str| Error::Container(format!("{}: {m}", path.display()));
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let h: Vec<&str> = line.split_whitespace().collect();
        if h.len() != 3 || h[0] != EMBED_MAGIC {
            return Err(bad("bad header"));
        }
        let dim: usize = h[1].parse().map_err(|_| bad("bad dim"))?;
        let count: usize = h[2].parse().map_err(|_| bad("bad count"))?;
        let mut e = Self::new(dim)?;
        let mut buf = vec![0u8; dim * 4];
        for _ in 0..count {
            line.clear();
            r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            let (id, start) = line.trim_end().rsplit_once(' ').ok_or_else(|| bad("bad record"))?;
            let start: i64 = start.parse().map_err(|_| bad("bad start"))?;
            r.read_exact(&mut buf).map_err(|_| bad("truncated record"))?;
            let v = buf.chunks(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            e.vectors.insert((id.to_string(), start), v);
        }
        Ok(e)
    }
}

impl<T: Scalar> Embedder<T> for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _store: &ParamStore<T>, tape: &mut GradTape<T>, batch: &[EmbedQuery]) -> Result<Var> {
        let mut data = Vec::with_capacity(batch.len() * self.dim);
        for q in batch {
            data.extend(self.get(q.transcript_id, q.start)?.iter().map(|&v| T::c(v as f64)));
        }
        Ok(tape.input(Tensor::new(vec![batch.len(), self.dim], data)?))
    }

    fn kind(&self) -> &'static str {
        "file"
    }
}

/// Transcript-level embedder with a per-transcript cache. While frozen, each
/// transcript is encoded once per cache lifetime and enters the graph as a
/// constant; otherwise it is encoded on the caller's tape every time.
pub struct SentenceEmbedder<T: Scalar> {
    pub inner: Box<dyn Embedder<T>>,
    cache: RwLock<HashMap<String, Vec<T>>>,
    calls: AtomicUsize,
}

impl<T: Scalar> SentenceEmbedder<T> {
    pub fn new(inner: Box<dyn Embedder<T>>) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Number of transcripts pushed through the inner embedder so far.
    pub fn encoder_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn invalidate(&self) {
        self.cache.write().expect("cache lock").clear();
    }

    /// `[U, dim]` rows for `queries` (one per distinct transcript).
    pub fn embed(
        &self,
        store: &ParamStore<T>,
        tape: &mut GradTape<T>,
        queries: &[EmbedQuery],
        frozen: bool,
    ) -> Result<Var> {
        if !frozen {
            self.calls.fetch_add(queries.len(), Ordering::Relaxed);
            return embed_one_by_one(self.inner.as_ref(), store, tape, queries);
        }
        let missing: Vec<EmbedQuery> = {
            let cache = self.cache.read().expect("cache lock");
            queries.iter().filter(|q| !cache.contains_key(q.transcript_id)).copied().collect()
        };
        if !missing.is_empty() {
            let mut side = GradTape::new();
            let v = embed_one_by_one(self.inner.as_ref(), store, &mut side, &missing)?;
            self.calls.fetch_add(missing.len(), Ordering::Relaxed);
            let mut cache = self.cache.write().expect("cache lock");
            for (q, row) in missing.iter().zip(side.value(v).data().chunks(self.dim())) {
                cache.insert(q.transcript_id.to_string(), row.to_vec());
            }
        }
        let cache = self.cache.read().expect("cache lock");
        let mut data = Vec::with_capacity(queries.len() * self.dim());
        for q in queries {
            data.extend_from_slice(&cache[q.transcript_id]);
        }
        Ok(tape.input(Tensor::new(vec![queries.len(), self.dim()], data)?))
    }
}

/// Transcripts differ in length, so each is embedded as its own batch.
fn embed_one_by_one<T: Scalar>(
    e: &dyn Embedder<T>,
    store: &ParamStore<T>,
    tape: &mut GradTape<T>,
    queries: &[EmbedQuery],
) -> Result<Var> {
    let rows: Vec<Var> = queries
        .iter()
        .map(|q| e.embed(store, tape, std::slice::from_ref(q)))
        .collect::<Result<_>>()?;
    match rows.len() {
        1 => Ok(rows[0]),
        _ => {
            let wide = tape.concat(&rows)?;
            let d = e.dim();
            tape.reshape(wide, &[rows.len(), d])
        }
    }
}
