use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

/// Affine map `x·W + b` applied to every row of `x` (all leading axes are rows).
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if weight.rank() != 2 {
        return Err(Error::shape("dense", format!("weight must be rank 2, got {:?}", weight.shape())));
    }
    let (din, dout) = (weight.shape()[0], weight.shape()[1]);
    if input.last_dim() != din {
        return Err(Error::shape(
            "dense",
            format!("input last dim {} != weight rows {din}", input.last_dim()),
        ));
    }
    if bias.len() != dout {
        return Err(Error::shape("dense", format!("bias length {} != {dout}", bias.len())));
    }
    let rows = input.len() / din;
    let mut out = matmul(input.data(), weight.data(), rows, din, dout, false, false);
    for row in out.chunks_mut(dout) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::new(shape, out)
}

/// Gradients `(dx, dW, db)` of [`dense`].
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (din, dout) = (weight.shape()[0], weight.shape()[1]);
    let rows = input.len() / din;
    let dy = grad_out.data();
    let dx = matmul(dy, weight.data(), rows, dout, din, false, true);
    let dw = matmul(input.data(), dy, din, rows, dout, true, false);
    let mut db = vec![T::zero(); dout];
    for row in dy.chunks(dout) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(vec![dout], db)?,
    ))
}
