use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy with predictions clamped to `[eps, 1-eps]`.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &[T], eps: T) -> Result<T> {
    check_targets(pred, target)?;
    let n = T::c(pred.len() as f64);
    let lo = eps;
    let hi = T::one() - eps;
    let total = pred
        .data()
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum::<T>();
    Ok(total / n)
}

pub fn bce_backward<T: Scalar>(pred: &Tensor<T>, target: &[T], eps: T, grad: T) -> Tensor<T> {
    let n = T::c(pred.len() as f64);
    let lo = eps;
    let hi = T::one() - eps;
    Tensor::from_fn(pred.shape(), |i| {
        let p = pred.data()[i];
        if p < lo || p > hi {
            return T::zero();
        }
        let y = target[i];
        grad * (-(y / p) + (T::one() - y) / (T::one() - p)) / n
    })
}

fn check_targets<T: Scalar>(pred: &Tensor<T>, target: &[T]) -> Result<()> {
    if target.len() != pred.len() {
        return Err(Error::shape(
            "bce_loss",
            format!("{} predictions vs {} targets", pred.len(), target.len()),
        ));
    }
    if let Some(bad) = target.iter().find(|&&y| y != T::zero() && y != T::one()) {
        return Err(Error::InvalidArgument(format!(
            "bce target must be 0 or 1, got {bad:?}"
        )));
    }
    Ok(())
}
