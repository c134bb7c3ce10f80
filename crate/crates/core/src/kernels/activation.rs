use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => relu(input),
        Activation::Sigmoid => sigmoid(input),
    }
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Logistic function. Saturated outputs are pulled inside the open unit
/// interval so the result is always strictly between 0 and 1.
pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon();
    input.map(|v| sigmoid_scalar(v).max(lo).min(hi))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| {
        let u = T::c(GELU_C) * (x + T::c(0.044715) * x * x * x);
        T::c(0.5) * x * (T::one() + u.tanh())
    })
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::c(GELU_C) * (x + T::c(0.044715) * x * x * x);
    let t = u.tanh();
    let du = T::c(GELU_C) * (T::one() + T::c(3.0 * 0.044715) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * du
}
