//! Mini-batch Adam training with early stopping, shared by both classifiers.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::norm::update_running_stats;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{ParamId, ParamStore};
use crate::tape::{BnStats, GradTape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            batch_size: 32,
            max_epochs: 200,
            patience: 30,
            seed: 0,
            bn_momentum: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    /// `epoch,train_loss,val_loss` CSV (empty val column when no validation set).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            let v = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, v));
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// A model that can be fitted by [`fit`].
pub trait Objective {
    type Sample;

    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;

    /// Mean loss over `batch`; `train` selects batch-statistics normalization.
    fn loss(&mut self, tape: &mut GradTape<f32>, batch: &[&Self::Sample], train: bool) -> Result<Var>;

    fn label(sample: &Self::Sample) -> bool;

    /// Whether the optimizer may change this array.
    fn is_updated(&self, id: ParamId) -> bool;

    /// Whether batch-norm running statistics may move.
    fn updates_running_stats(&self) -> bool {
        true
    }

    fn on_epoch_start(&mut self, _epoch: usize) {}
}

pub fn require_both_classes<S, M: Objective<Sample = S>>(data: &[S]) -> Result<()> {
    let pos = data.iter().filter(|s| M::label(s)).count();
    match pos {
        0 => Err(Error::SingleClass("HC")),
        p if p == data.len() => Err(Error::SingleClass("AD")),
        _ => Ok(()),
    }
}

fn apply_bn_stats(store: &mut ParamStore<f32>, stats: Vec<BnStats<f32>>, momentum: f32) -> Result<()> {
    for s in stats {
        let layer = &mut store.layers_mut()[s.layer];
        update_running_stats(layer, &s.mean, &s.var, momentum)?;
    }
    Ok(())
}

pub fn evaluate_loss<M: Objective>(model: &mut M, data: &[M::Sample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&M::Sample> = chunk.iter().collect();
        let mut tape = GradTape::new();
        let l = model.loss(&mut tape, &refs, false)?;
        total += tape.value(l).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains until `max_epochs` or until validation loss (training loss when
/// `val` is empty) has not improved for `patience` epochs; the best
/// weights are restored at the end.
pub fn fit<M: Objective>(model: &mut M, train: &[M::Sample], val: &[M::Sample], cfg: &TrainConfig) -> Result<History> {
    require_both_classes::<_, M>(train)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best = (f64::INFINITY, model.store().clone());
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        model.on_epoch_start(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&M::Sample> = idx.iter().map(|&i| &train[i]).collect();
            let mut tape = GradTape::new();
            let loss = model.loss(&mut tape, &batch, true)?;
            let lv = tape.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            sum += lv * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let stats = tape.take_bn_stats();
            let keep: Vec<ParamId> = grads.params.keys().copied().filter(|&id| model.is_updated(id)).collect();
            adam_step(model.store_mut(), &grads, &mut state, &adam, |id| keep.contains(&id))?;
            if model.updates_running_stats() {
                apply_bn_stats(model.store_mut(), stats, cfg.bn_momentum as f32)?;
            }
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = match val.is_empty() {
            true => None,
            false => Some(evaluate_loss(model, val, cfg.batch_size)?),
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, model.store().clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience.max(1) {
                history.stopped_early = true;
                break;
            }
        }
    }
    *model.store_mut() = best.1;
    Ok(history)
}
