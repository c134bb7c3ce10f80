//! Greedy longest-match-first subword tokenization.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::segment::{PAD, SEGMENT_LEN};

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";
/// Twice the segment length plus `[CLS]` and `[SEP]`.
pub const DEFAULT_MAX_LEN: usize = 2 * SEGMENT_LEN + 2;
const MAX_CHARS_PER_WORD: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Empty("subword vocabulary"));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary piece {p:?}")));
            }
        }
        for special in [UNK, PAD, CLS, SEP] {
            if !index.contains_key(special) {
                return Err(Error::InvalidArgument(format!("vocabulary lacks {special}")));
            }
        }
        Ok(Self { pieces, index })
    }

    /// One piece per line; the line number is the id.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_pieces(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Specials, every whole word of `words`, and every single character as
    /// both a leading and a continuation piece so any word is coverable.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut whole = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for w in words {
            let w = w.to_lowercase();
            chars.extend(w.chars());
            whole.insert(w);
        }
        let mut pieces: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        for c in &chars {
            pieces.push(c.to_string());
            pieces.push(format!("{CONTINUATION}{c}"));
        }
        for w in whole {
            if w.chars().count() > 1 && !matches!(w.as_str(), PAD | UNK | CLS | SEP) {
                pieces.push(w);
            }
        }
        Self::from_pieces(pieces).expect("built vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    fn special(&self, s: &str) -> usize {
        self.index[s]
    }

    /// Subword pieces of one word; a word with any uncoverable remainder
    /// becomes a single `[UNK]`.
    pub fn split_word(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_CHARS_PER_WORD {
            return vec![UNK.to_string()];
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut sub: String = chars[start..end].iter().collect();
                if start > 0 {
                    sub.insert_str(0, CONTINUATION);
                }
                if self.index.contains_key(&sub) {
                    found = Some(sub);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(p) => out.push(p),
                None => return vec![UNK.to_string()],
            }
            start = end;
        }
        out
    }
}

/// Encoded subword sequence with its attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordIds {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

/// `[CLS] pieces [SEP]`, post-truncated and post-padded to `max_len`.
/// PAD input tokens are skipped; words are lowercased first.
pub fn wordpiece_tokenize(tokens: &[String], vocab: &Vocab, max_len: usize) -> Result<SubwordIds> {
    if vocab.is_empty() {
        return Err(Error::Empty("subword vocabulary"));
    }
    if max_len < 2 {
        return Err(Error::InvalidArgument("max_len must leave room for [CLS] and [SEP]".into()));
    }
    let mut ids = vec![vocab.special(CLS)];
    for t in tokens.iter().filter(|t| t.as_str() != PAD) {
        for p in vocab.split_word(&t.to_lowercase()) {
            ids.push(vocab.id(&p).unwrap_or(vocab.special(UNK)));
        }
    }
    ids.truncate(max_len - 1);
    ids.push(vocab.special(SEP));
    let real = ids.len();
    ids.resize(max_len, vocab.special(PAD));
    let mask = (0..max_len).map(|i| i < real).collect();
    Ok(SubwordIds { ids, mask })
}
