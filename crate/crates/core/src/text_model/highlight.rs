//! Transcript-level prediction and top-segment highlighting.

use serde::{Deserialize, Serialize};

use super::aggregate_text;
use crate::error::{Error, Result};
use crate::text::TranscriptSegment;

pub const TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPrediction {
    pub transcript_id: String,
    pub segments: Vec<TranscriptSegment>,
    pub segment_probs: Vec<f64>,
    pub p_t: f64,
    /// Indices into `segments`, highest probability first.
    pub top: Vec<usize>,
}

impl TextPrediction {
    pub fn new(transcript_id: &str, segments: Vec<TranscriptSegment>, segment_probs: Vec<f64>) -> Result<Self> {
        if segments.len() != segment_probs.len() {
            return Err(Error::shape(
                "text prediction",
                format!("{} segments, {} probabilities", segments.len(), segment_probs.len()),
            ));
        }
        let p_t = aggregate_text(&segment_probs)?;
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.sort_by(|&a, &b| {
            segment_probs[b]
                .total_cmp(&segment_probs[a])
                .then(segments[a].start.cmp(&segments[b].start))
        });
        order.truncate(TOP_K);
        Ok(Self {
            transcript_id: transcript_id.to_string(),
            segments,
            segment_probs,
            p_t,
            top: order,
        })
    }
}

/// Up to five `(segment text, probability)` pairs, most probable first.
pub fn highlight_top5(prediction: &TextPrediction) -> Vec<(String, f64)> {
    prediction
        .top
        .iter()
        .map(|&i| (prediction.segments[i].text(), prediction.segment_probs[i]))
        .collect()
}

/// The whole transcript with the tokens of the top segments wrapped in
/// `>>> ... <<<` (overlapping or touching spans are merged), followed by the
/// ranked segment list.
pub fn render_highlights(prediction: &TextPrediction, tokens: &[String]) -> String {
    let mut flagged = vec![false; tokens.len()];
    for &i in &prediction.top {
        let s = &prediction.segments[i];
        for f in flagged.iter_mut().skip(s.start).take(s.real) {
            *f = true;
        }
    }
    let mut out = String::new();
    out.push_str(&format!("transcript {}  p_t={:.4}\n", prediction.transcript_id, prediction.p_t));
    let mut words = Vec::with_capacity(tokens.len() + 8);
    for (i, tok) in tokens.iter().enumerate() {
        if flagged[i] && (i == 0 || !flagged[i - 1]) {
            words.push(">>>".to_string());
        }
        words.push(tok.clone());
        if flagged[i] && (i + 1 == tokens.len() || !flagged[i + 1]) {
            words.push("<<<".to_string());
        }
    }
    out.push_str(&words.join(" "));
    out.push('\n');
    for (rank, (text, p)) in highlight_top5(prediction).iter().enumerate() {
        out.push_str(&format!("{}. {:.4}  {}\n", rank + 1, p, text));
    }
    out
}
