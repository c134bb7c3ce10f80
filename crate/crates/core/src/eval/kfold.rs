//! Subject-level stratified folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indices into the subject list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Both classes are shuffled, laid end to end (AD first) and dealt
/// round-robin, so fold sizes differ by at most one and so do the per-fold
/// class counts.
pub fn kfold_split(labels: &[bool], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 || k > labels.len() {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= k <= subject count, got k={k} for {} subjects",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(labels.len());
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            log::warn!(
                "class {} has {} subjects for {k} folds; some folds will lack it",
                if class { "AD" } else { "HC" },
                members.len()
            );
        }
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut tests = vec![Vec::new(); k];
    for (pos, &i) in order.iter().enumerate() {
        tests[pos % k].push(i);
    }
    Ok(tests
        .into_iter()
        .enumerate()
        .map(|(fold, mut test)| {
            test.sort_unstable();
            let train = (0..labels.len()).filter(|i| test.binary_search(i).is_err()).collect();
            FoldSplit { fold, train, test }
        })
        .collect())
}

/// Holds out `fraction` of `pool` (stratified, at least one subject of each
/// class that has two or more members) for validation.
pub fn validation_split(pool: &[usize], labels: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut members: Vec<usize> = pool.iter().copied().filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let mut n = (members.len() as f64 * fraction).round() as usize;
        if n == 0 && members.len() >= 2 && fraction > 0.0 {
            n = 1;
        }
        val.extend_from_slice(&members[..n]);
        train.extend_from_slice(&members[n..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}
