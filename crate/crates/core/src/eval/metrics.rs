//! Confusion-matrix metrics with AD as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Counts over `(score, is_ad)` pairs; AD is predicted when `score >= threshold`.
    pub fn from_scores(scored: &[(f64, bool)], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for &(s, ad) in scored {
            match (s >= threshold, ad) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Undefined ratios (zero denominator) are `None`, never 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Result<Self> {
        if c.total() == 0 {
            return Err(Error::Empty("metrics need at least one prediction"));
        }
        Ok(Self {
            n: c.total(),
            accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            specificity: ratio(c.tn, c.tn + c.fp),
            sensitivity: ratio(c.tp, c.tp + c.fn_),
            confusion: c,
        })
    }
}

pub fn compute_metrics(scored: &[(f64, bool)], threshold: f64) -> Result<Metrics> {
    Metrics::from_confusion(Confusion::from_scores(scored, threshold))
}

/// Scalar summaries usable as bootstrap statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    F1,
    Specificity,
    Sensitivity,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Accuracy,
        Metric::F1,
        Metric::Specificity,
        Metric::Sensitivity,
        Metric::Auc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::Specificity => "specificity",
            Metric::Sensitivity => "sensitivity",
            Metric::Auc => "auc",
        }
    }

    pub fn eval(self, scored: &[(f64, bool)], threshold: f64) -> Result<f64> {
        if self == Metric::Auc {
            return super::roc::roc_auc(scored).map(|r| r.auc);
        }
        let m = compute_metrics(scored, threshold)?;
        let v = match self {
            Metric::Accuracy => Some(m.accuracy),
            Metric::F1 => m.f1,
            Metric::Specificity => m.specificity,
            Metric::Sensitivity => m.sensitivity,
            Metric::Auc => unreachable!(),
        };
        v.ok_or(Error::UndefinedMetric(self.name()))
    }
}
