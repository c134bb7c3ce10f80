//! Age-bin and gender breakdowns.

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use crate::error::Result;
use crate::fusion::SubjectPrediction;
use crate::subject::Gender;

/// Inclusive age ranges.
pub const AGE_BINS: [(u32, u32); 5] = [(46, 55), (56, 65), (66, 75), (76, 85), (86, 95)];

pub fn age_bin(age: u32) -> Option<usize> {
    AGE_BINS.iter().position(|&(lo, hi)| (lo..=hi).contains(&age))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub group: String,
    pub count: usize,
    /// Share of the subjects that fall in any group of this table.
    pub fraction: f64,
    /// Absent for an empty group.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub age: Vec<SubgroupRow>,
    pub gender: Vec<SubgroupRow>,
    /// Subjects without an age or with an age outside every bin.
    pub unbinned_age: usize,
    pub missing_gender: usize,
}

fn table(groups: Vec<(String, Vec<(f64, bool)>)>, threshold: f64) -> Result<Vec<SubgroupRow>> {
    let total: usize = groups.iter().map(|g| g.1.len()).sum();
    groups
        .into_iter()
        .map(|(group, scored)| {
            Ok(SubgroupRow {
                group,
                count: scored.len(),
                fraction: if total == 0 { 0.0 } else { scored.len() as f64 / total as f64 },
                metrics: match scored.is_empty() {
                    true => None,
                    false => Some(compute_metrics(&scored, threshold)?),
                },
            })
        })
        .collect()
}

/// Metrics per age bin and per gender at fusion weight `w`. Subjects whose
/// fused score is unavailable are left out.
pub fn subgroup_report(preds: &[SubjectPrediction], w: f64, threshold: f64) -> Result<SubgroupReport> {
    let mut ages: Vec<(String, Vec<(f64, bool)>)> =
        AGE_BINS.iter().map(|(lo, hi)| (format!("{lo}-{hi}"), Vec::new())).collect();
    let mut genders: Vec<(String, Vec<(f64, bool)>)> =
        [Gender::Female, Gender::Male].iter().map(|g| (g.to_string(), Vec::new())).collect();
    let (mut unbinned_age, mut missing_gender) = (0, 0);
    for p in preds {
        let Some(score) = p.p_c(w) else { continue };
        let item = (score, p.is_ad());
        match p.age.and_then(age_bin) {
            Some(b) => ages[b].1.push(item),
            None => unbinned_age += 1,
        }
        match p.gender {
            Some(Gender::Female) => genders[0].1.push(item),
            Some(Gender::Male) => genders[1].1.push(item),
            None => missing_gender += 1,
        }
    }
    Ok(SubgroupReport {
        age: table(ages, threshold)?,
        gender: table(genders, threshold)?,
        unbinned_age,
        missing_gender,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn render_table(title: &str, rows: &[SubgroupRow]) -> String {
    let mut s = format!(
        "{:<8}  {:>8}  {:>5}  {:>8}  {:>11}  {:>11}  {:>6}\n",
        title, "fraction", "count", "accuracy", "specificity", "sensitivity", "F1"
    );
    for r in rows {
        let m = r.metrics.as_ref();
        s.push_str(&format!(
            "{:<8}  {:>8.3}  {:>5}  {:>8}  {:>11}  {:>11}  {:>6}\n",
            r.group,
            r.fraction,
            r.count,
            cell(m.map(|m| m.accuracy)),
            cell(m.and_then(|m| m.specificity)),
            cell(m.and_then(|m| m.sensitivity)),
            cell(m.and_then(|m| m.f1)),
        ));
    }
    s
}

pub fn render_subgroups(r: &SubgroupReport) -> String {
    format!("{}\n{}", render_table("age", &r.age), render_table("gender", &r.gender))
}
