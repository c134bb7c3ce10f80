//! Percentile bootstrap over subjects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Redraws allowed for a resample whose metric is undefined.
    pub max_retries: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 0,
            max_retries: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Resamples dropped after exhausting their retries.
    pub skipped: usize,
}

/// Linear-interpolated percentile of sorted values, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Each resample draws from its own ChaCha stream, so the interval does
/// not depend on how resamples are scheduled across threads.
pub fn bootstrap_ci<T, F>(items: &[T], metric: F, cfg: &BootstrapConfig) -> Result<Interval>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Result<f64> + Sync,
{
    if items.is_empty() {
        return Err(Error::Empty("bootstrap needs at least one prediction"));
    }
    if cfg.resamples == 0 || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs resamples > 0 and level in (0, 1), got {} and {}",
            cfg.resamples, cfg.level
        )));
    }
    let values: Vec<Option<f64>> = (0..cfg.resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut buf = Vec::with_capacity(items.len());
            for _ in 0..=cfg.max_retries {
                buf.clear();
                buf.extend((0..items.len()).map(|_| items[rng.gen_range(0..items.len())].clone()));
                if let Ok(v) = metric(&buf) {
                    if v.is_finite() {
                        return Some(v);
                    }
                }
            }
            None
        })
        .collect();
    let mut kept: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = cfg.resamples - kept.len();
    if kept.is_empty() {
        return Err(Error::UndefinedMetric("metric undefined on every bootstrap resample"));
    }
    if skipped > 0 {
        log::warn!("bootstrap skipped {skipped} of {} resamples", cfg.resamples);
    }
    kept.sort_by(f64::total_cmp);
    let tail = (1.0 - cfg.level) / 2.0;
    Ok(Interval {
        lo: percentile(&kept, tail),
        hi: percentile(&kept, 1.0 - tail),
        skipped,
    })
}
