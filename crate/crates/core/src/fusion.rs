//! Weighted late fusion of the audio and text subject probabilities.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{compute_metrics, Metrics};
use crate::eval::roc::roc_auc;
use crate::subject::{Gender, Label};
use crate::text::TranscriptSource;

/// Weight standing in for "text only"; finite so it still goes through the formula.
pub const TEXT_ONLY_WEIGHT: f64 = 1e14;

/// Audio only, equal, two text-leaning weights, text only.
pub const DEFAULT_WEIGHTS: [f64; 5] = [0.0, 1.0, 1.5, 2.0, TEXT_ONLY_WEIGHT];

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `(p_a + w p_t) / (1 + w)`.
pub fn late_fuse(p_a: f64, p_t: f64, w: f64) -> Result<f64> {
    if !(w >= 0.0) {
        return Err(Error::InvalidArgument(format!("fusion weight must be non-negative, got {w}")));
    }
    if w.is_infinite() {
        return Ok(p_t);
    }
    Ok((p_a + w * p_t) / (1.0 + w))
}

/// AD iff `p >= threshold`.
pub fn classify(p: f64, threshold: f64) -> Label {
    Label::from(p >= threshold)
}

/// One row of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub label: Label,
    pub p_a: Option<f64>,
    pub p_t: Option<f64>,
    pub age: Option<u32>,
    pub gender: Option<Gender>,
    pub source: Option<TranscriptSource>,
}

impl SubjectPrediction {
    /// Fused probability; w = 0 needs only `p_a`, an infinite w only `p_t`.
    pub fn p_c(&self, w: f64) -> Option<f64> {
        match (self.p_a, self.p_t) {
            (Some(a), Some(t)) => late_fuse(a, t, w).ok(),
            (Some(a), None) if w == 0.0 => Some(a),
            (None, Some(t)) if w.is_infinite() => Some(t),
            _ => None,
        }
    }

    pub fn is_ad(&self) -> bool {
        self.label.is_ad()
    }
}

/// `(p_c, is_ad)` pairs at weight `w`; every subject needs both probabilities.
pub fn fused_scores(preds: &[SubjectPrediction], w: f64) -> Result<Vec<(f64, bool)>> {
    if w < 0.0 || w.is_nan() {
        return Err(Error::InvalidArgument(format!("fusion weight must be non-negative, got {w}")));
    }
    preds
        .iter()
        .map(|p| match (p.p_a, p.p_t) {
            (Some(_), Some(_)) => Ok((p.p_c(w).unwrap(), p.is_ad())),
            _ => Err(Error::InvalidArgument(format!(
                "subject {} lacks an audio or text probability",
                p.subject_id
            ))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub w: f64,
    pub metrics: Metrics,
    /// Absent when the predictions hold a single class.
    pub auc: Option<f64>,
}

/// Metrics for each fusion weight, one row per weight in the given order.
pub fn weight_sweep(preds: &[SubjectPrediction], weights: &[f64], threshold: f64) -> Result<Vec<SweepRow>> {
    weights
        .iter()
        .map(|&w| {
            let scored = fused_scores(preds, w)?;
            Ok(SweepRow {
                w,
                metrics: compute_metrics(&scored, threshold)?,
                auc: roc_auc(&scored).ok().map(|r| r.auc),
            })
        })
        .collect()
}

pub fn format_weight(w: f64) -> String {
    if w >= 1e6 {
        format!("{w:e}")
    } else {
        format!("{w}")
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.3}", x)).unwrap_or_else(|| "-".into())
}

/// Plain-text table, rows = weights.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{:>8}  {:>8}  {:>6}  {:>11}  {:>11}  {:>6}\n",
        "w", "accuracy", "F1", "specificity", "sensitivity", "AUC"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>8}  {:>8}  {:>6}  {:>11}  {:>11}  {:>6}\n",
            format_weight(r.w),
            cell(Some(r.metrics.accuracy)),
            cell(r.metrics.f1),
            cell(r.metrics.specificity),
            cell(r.metrics.sensitivity),
            cell(r.auc)
        ));
    }
    s
}

pub fn write_predictions(path: &Path, preds: &[SubjectPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in preds {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<SubjectPrediction>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let p: SubjectPrediction = row?;
        for v in [p.p_a, p.p_t].into_iter().flatten() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "subject {}: probability {v} outside [0, 1]",
                    p.subject_id
                )));
            }
        }
        out.push(p);
    }
    Ok(out)
}
