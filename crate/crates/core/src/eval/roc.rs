//! ROC curve and trapezoidal AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score threshold (AD iff score >= threshold); `None` for the (0,0) anchor.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// One point per unique score, highest first, after a (0,0) anchor. Tied
/// scores enter together, so a tie contributes a diagonal segment. The last
/// point (lowest score) is always (1,1).
pub fn roc_auc(scored: &[(f64, bool)]) -> Result<Roc> {
    if scored.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::NonFinite("ROC scores".into()));
    }
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 {
        return Err(Error::SingleClass("HC"));
    }
    if neg == 0 {
        return Err(Error::SingleClass("AD"));
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = points.last().unwrap();
        let (fpr, tpr) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (fpr - prev.fpr) * (tpr + prev.tpr) / 2.0;
        points.push(RocPoint {
            fpr,
            tpr,
            threshold: Some(t),
        });
    }
    Ok(Roc { points, auc })
}
