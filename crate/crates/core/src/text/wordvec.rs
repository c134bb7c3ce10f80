//! Word vectors with a character n-gram fallback for unseen words.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::segment::{TranscriptSegment, PAD, SEGMENT_LEN};

pub const DEFAULT_DIM: usize = 300;
pub const DEFAULT_BUCKETS: usize = 2_000_000;
pub const DEFAULT_MAX_TOKENS: usize = SEGMENT_LEN + 1;
pub const MIN_NGRAM: usize = 3;
pub const MAX_NGRAM: usize = 6;

/// Hashed n-gram buckets whose vectors are derived from `(seed, bucket)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subwords {
    pub buckets: usize,
    pub seed: u64,
}

impl Subwords {
    pub fn bucket_vector(&self, bucket: usize, dim: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(bucket as u64);
        let scale = 1.0 / (dim as f32).sqrt();
        (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
    }
}

/// 32-bit FNV-1a, the n-gram hash used by fastText.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for &b in bytes {
        h ^= b as i8 as u32;
        h = h.wrapping_mul(16_777_619);
    }
    h
}

/// Character n-grams (3..=6) of `<word>`.
pub fn char_ngrams(word: &str) -> Vec<String> {
    let wrapped: Vec<char> = format!("<{word}>").chars().collect();
    let mut out = Vec::new();
    for i in 0..wrapped.len() {
        for n in MIN_NGRAM..=MAX_NGRAM {
            if i + n > wrapped.len() {
                break;
            }
            out.push(wrapped[i..i + n].iter().collect());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
    subwords: Option<Subwords>,
    unk: Vec<f32>,
}

impl WordVectorTable {
    pub fn new(dim: usize, subwords: Option<Subwords>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("word vector dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
            subwords,
            unk: vec![0.0; dim],
        })
    }

    /// Random unit-scale vectors for `words`, with n-gram fallback enabled.
    pub fn random<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Result<Self> {
        let mut t = Self::new(
            dim,
            Some(Subwords {
                buckets: DEFAULT_BUCKETS,
                seed: seed ^ 0x5eed,
            }),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words: Vec<&str> = words.into_iter().collect();
        words.sort_unstable();
        words.dedup();
        for w in words {
            let v = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            t.insert(w, v)?;
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn subwords(&self) -> Option<Subwords> {
        self.subwords
    }

    pub fn set_unk(&mut self, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape("set_unk", format!("{} != {}", v.len(), self.dim)));
        }
        self.unk = v;
        Ok(())
    }

    pub fn insert(&mut self, token: &str, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape("word vector", format!("{token:?} has {} values, table dim {}", v.len(), self.dim)));
        }
        self.vectors.insert(token.to_string(), v);
        Ok(())
    }

    /// Vector for any token: stored vector, else the sum of its n-gram
    /// bucket vectors, else the UNK vector. PAD maps to zeros.
    pub fn lookup(&self, token: &str) -> Vec<f32> {
        if token == PAD {
            return vec![0.0; self.dim];
        }
        if let Some(v) = self.vectors.get(token) {
            return v.clone();
        }
        match self.subwords {
            Some(sw) => {
                let mut acc = vec![0.0f32; self.dim];
                for g in char_ngrams(token) {
                    let b = fnv1a(g.as_bytes()) as usize % sw.buckets;
                    for (a, x) in acc.iter_mut().zip(sw.bucket_vector(b, self.dim)) {
                        *a += x;
                    }
                }
                acc
            }
            None => self.unk.clone(),
        }
    }

    /// Text format: `count dim` then `token v1 .. vd` per line.
    pub fn load(path: &Path, subwords: Option<Subwords>) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let bad = |m: String| Error::InvalidArgument(format!("{}: {m}", path.display()));
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?.map_err(|e| Error::io(path, e))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| bad(format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [count, dim] = h[..] else {
            return Err(bad(format!("bad header {header:?}")));
        };
        let mut t = Self::new(dim, subwords)?;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let tok = parts.next().unwrap_or_default();
            let v: Vec<f32> = parts
                .map(|x| x.parse().map_err(|_| bad(format!("line {}: bad value {x:?}", i + 2))))
                .collect::<Result<_>>()?;
            t.insert(tok, v).map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
        }
        if t.len() != count {
            return Err(bad(format!("header declares {count} vectors, found {}", t.len())));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut s = format!("{} {}\n", keys.len(), self.dim);
        for k in keys {
            s.push_str(k);
            for x in &self.vectors[k] {
                s.push_str(&format!(" {x}"));
            }
            s.push('\n');
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// `[max_tokens, d]` matrix of token vectors, PAD rows zero, post-truncated.
pub fn encode_segment_wordvecs(segment: &TranscriptSegment, table: &WordVectorTable, max_tokens: usize) -> Tensor<f32> {
    let d = table.dim();
    let mut data = vec![0.0f32; max_tokens * d];
    for (row, tok) in segment.tokens.iter().take(max_tokens).enumerate() {
        if tok != PAD {
            data[row * d..(row + 1) * d].copy_from_slice(&table.lookup(tok));
        }
    }
    Tensor::new(vec![max_tokens, d], data).expect("sized above")
}
