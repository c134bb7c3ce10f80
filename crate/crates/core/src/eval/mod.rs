//! Cross-validated evaluation: metrics, ROC, bootstrap intervals, folds and
//! subgroup tables, gathered into one report.

pub mod bootstrap;
pub mod kfold;
pub mod metrics;
pub mod roc;
pub mod subgroup;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_ci, BootstrapConfig, Interval};
pub use kfold::{kfold_split, validation_split, FoldSplit};
pub use metrics::{compute_metrics, Confusion, Metric, Metrics};
pub use roc::{roc_auc, Roc, RocPoint};
pub use subgroup::{age_bin, render_subgroups, subgroup_report, SubgroupReport, SubgroupRow, AGE_BINS};

use crate::error::{Error, Result};
use crate::fusion::{fused_scores, SubjectPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightResult {
    pub w: f64,
    pub metrics: Metrics,
    pub auc: Option<f64>,
}

impl WeightResult {
    fn compute(scored: &[(f64, bool)], w: f64, threshold: f64) -> Result<Self> {
        Ok(Self {
            w,
            metrics: compute_metrics(scored, threshold)?,
            auc: roc_auc(scored).ok().map(|r| r.auc),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub subjects: Vec<String>,
    pub results: Vec<WeightResult>,
    /// ROC at the report's selected weight; absent when the fold holds one class.
    pub roc: Option<Roc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    #[serde(flatten)]
    pub result: WeightResult,
    /// Metrics undefined on every resample have no interval.
    pub ci: BTreeMap<Metric, Interval>,
}

/// Metrics are computed on the pooled out-of-fold predictions; the per-fold
/// breakdown is kept alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub bootstrap: BootstrapConfig,
    pub folds: Vec<FoldReport>,
    pub pooled: Vec<PooledResult>,
    /// Weight with the highest pooled accuracy (first on ties).
    pub best_weight: f64,
    pub subgroups: SubgroupReport,
}

impl EvalReport {
    pub fn pooled_at(&self, w: f64) -> Option<&PooledResult> {
        self.pooled.iter().find(|p| p.result.w == w)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    /// `fold,fpr,tpr,threshold`; the (0,0) anchor has an empty threshold.
    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("fold,fpr,tpr,threshold\n");
        for f in &self.folds {
            for p in f.roc.iter().flat_map(|r| &r.points) {
                let t = p.threshold.map(|t| t.to_string()).unwrap_or_default();
                s.push_str(&format!("{},{},{},{}\n", f.fold, p.fpr, p.tpr, t));
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// `folds[i]` lists the indices of `preds` tested in fold i; together they
/// must cover every prediction exactly once.
pub fn evaluate(
    preds: &[SubjectPrediction],
    folds: &[Vec<usize>],
    weights: &[f64],
    threshold: f64,
    boot: &BootstrapConfig,
) -> Result<EvalReport> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("at least one fusion weight is required".into()));
    }
    let mut seen = vec![false; preds.len()];
    for &i in folds.iter().flatten() {
        if i >= preds.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("fold indices must partition the predictions (index {i})")));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument("some predictions belong to no fold".into()));
    }

    let mut pooled = Vec::with_capacity(weights.len());
    for &w in weights {
        let scored = fused_scores(preds, w)?;
        let mut ci = BTreeMap::new();
        for m in Metric::ALL {
            if let Ok(iv) = bootstrap_ci(&scored, |s| m.eval(s, threshold), boot) {
                ci.insert(m, iv);
            }
        }
        pooled.push(PooledResult {
            result: WeightResult::compute(&scored, w, threshold)?,
            ci,
        });
    }
    let best = pooled
        .iter()
        .fold(None::<&PooledResult>, |acc, p| match acc {
            Some(a) if a.result.metrics.accuracy >= p.result.metrics.accuracy => Some(a),
            _ => Some(p),
        })
        .unwrap();
    let best_weight = best.result.w;

    let mut fold_reports = Vec::with_capacity(folds.len());
    for (fold, idx) in folds.iter().enumerate() {
        let subset: Vec<SubjectPrediction> = idx.iter().map(|&i| preds[i].clone()).collect();
        let mut results = Vec::with_capacity(weights.len());
        for &w in weights {
            results.push(WeightResult::compute(&fused_scores(&subset, w)?, w, threshold)?);
        }
        fold_reports.push(FoldReport {
            fold,
            subjects: subset.iter().map(|p| p.subject_id.clone()).collect(),
            results,
            roc: roc_auc(&fused_scores(&subset, best_weight)?).ok(),
        });
    }
    Ok(EvalReport {
        threshold,
        bootstrap: boot.clone(),
        folds: fold_reports,
        pooled,
        best_weight,
        subgroups: subgroup_report(preds, best_weight, threshold)?,
    })
}
