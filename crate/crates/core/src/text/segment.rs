//! Overlapping fixed-length token windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const SEGMENT_LEN: usize = 7;
pub const SEGMENT_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    /// Exactly [`SEGMENT_LEN`] tokens, right-padded with [`PAD`].
    pub tokens: Vec<String>,
    /// Index of the first token in the parent transcript.
    pub start: usize,
    /// Number of real (non-PAD) tokens.
    pub real: usize,
    pub transcript_id: String,
}

impl TranscriptSegment {
    pub fn real_tokens(&self) -> &[String] {
        &self.tokens[..self.real]
    }

    pub fn text(&self) -> String {
        self.real_tokens().join(" ")
    }
}

/// Number of windows produced for `t` tokens.
pub fn segment_count(t: usize) -> usize {
    match t {
        0 => 0,
        t if t <= SEGMENT_LEN => 1,
        t => 1 + (t - SEGMENT_LEN).div_ceil(SEGMENT_STRIDE),
    }
}

/// Windows of seven tokens at stride four; the last window keeps whatever
/// tokens remain and is PAD-filled.
pub fn segment_tokens(tokens: &[String], transcript_id: &str) -> Result<Vec<TranscriptSegment>> {
    if tokens.is_empty() {
        return Err(Error::Empty("token list"));
    }
    Ok((0..segment_count(tokens.len()))
        .map(|i| {
            let start = i * SEGMENT_STRIDE;
            let end = (start + SEGMENT_LEN).min(tokens.len());
            let mut seg: Vec<String> = tokens[start..end].to_vec();
            let real = seg.len();
            seg.resize(SEGMENT_LEN, PAD.to_string());
            TranscriptSegment {
                tokens: seg,
                start,
                real,
                transcript_id: transcript_id.to_string(),
            }
        })
        .collect())
}
