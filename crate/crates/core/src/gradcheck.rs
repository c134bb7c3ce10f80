//! Analytic-vs-finite-difference gradient verification (run in `f64`).

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{GradTape, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor so arrays whose true gradient is zero (e.g. a conv bias
/// feeding a train-mode batch norm) compare on absolute error.
pub const NORM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ArrayCheck {
    pub key: String,
    pub checked: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub arrays: Vec<ArrayCheck>,
    pub rel_tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.arrays.iter().map(|a| a.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.rel_tolerance
    }

    pub fn failures(&self) -> Vec<&ArrayCheck> {
        self.arrays.iter().filter(|a| a.rel_error > self.rel_tolerance).collect()
    }
}

/// Compares tape gradients of `forward`'s scalar output against central
/// differences with step `h`. Relative error per array is
/// `‖analytic − numeric‖ / max(‖analytic‖ + ‖numeric‖, NORM_FLOOR)`.
/// At most `max_per_array` evenly spaced elements of each array are probed.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    forward: F,
    h: f64,
    rel_tolerance: f64,
    max_per_array: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut GradTape<f64>) -> Result<Var>,
{
    let mut tape = GradTape::new();
    let loss = forward(store, &mut tape)?;
    let grads = tape.backward(loss)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = GradTape::new();
        let l = forward(s, &mut t)?;
        Ok(t.value(l).data()[0])
    };
    let mut probe = store.clone();
    let mut arrays = Vec::new();
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        let Some(analytic) = grads.get(id) else { continue };
        let n = analytic.len();
        let step = match max_per_array {
            Some(m) if m < n => n.div_ceil(m),
            _ => 1,
        };
        let (mut diff, mut na, mut nn, mut checked) = (0.0, 0.0, 0.0, 0);
        for i in (0..n).step_by(step) {
            let orig = probe.tensor(id).data()[i];
            probe.tensor_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.tensor_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.tensor_mut(id).data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            diff += (a - num) * (a - num);
            na += a * a;
            nn += num * num;
            checked += 1;
        }
        let rel = diff.sqrt() / (na.sqrt() + nn.sqrt()).max(NORM_FLOOR);
        arrays.push(ArrayCheck {
            key: store.key(id),
            checked,
            rel_error: rel,
        });
    }
    Ok(GradCheckReport {
        arrays,
        rel_tolerance,
    })
}
