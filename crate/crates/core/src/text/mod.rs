//! Transcript tokenization, segmentation and encoding.

pub mod chat;
pub mod segment;
pub mod tokenize;
pub mod wordpiece;
pub mod wordvec;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use chat::extract_chat;
pub use segment::{segment_count, segment_tokens, TranscriptSegment, PAD, SEGMENT_LEN, SEGMENT_STRIDE};
pub use tokenize::tokenize_treebank;
pub use wordpiece::{wordpiece_tokenize, SubwordIds, Vocab};
pub use wordvec::{encode_segment_wordvecs, WordVectorTable};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptSource {
    Manual,
    Asr,
}

impl FromStr for TranscriptSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "manual" => Ok(Self::Manual),
            "asr" => Ok(Self::Asr),
            other => Err(Error::InvalidArgument(format!("unknown transcript source {other:?}"))),
        }
    }
}

impl fmt::Display for TranscriptSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Manual => "manual",
            Self::Asr => "asr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub subject_id: String,
    pub source: TranscriptSource,
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Transcript {
    pub fn new(subject_id: impl Into<String>, source: TranscriptSource, raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize_treebank(&raw);
        Self {
            subject_id: subject_id.into(),
            source,
            raw,
            tokens,
        }
    }

    pub fn segments(&self) -> Result<Vec<TranscriptSegment>> {
        segment_tokens(&self.tokens, &self.subject_id)
    }
}
