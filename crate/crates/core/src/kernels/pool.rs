use super::conv::dims4;
use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Max pooling with a square window and equal stride; trailing rows/columns
/// that do not fill a window are dropped. Returns the output and, for each
/// output cell, the flat input index that won.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    expect_rank("maxpool2d", input, 4)?;
    let (n, h, w, c) = dims4(input.shape());
    if window == 0 || h < window || w < window {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial dims {h}x{w} smaller than window {window}"),
        ));
    }
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = ((b * h + oy * window) * w + ox * window) * c + ch;
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = ((b * h + oy * window + dy) * w + ox * window + dx) * c + ch;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, arg))
}

/// Routes each output gradient back to the input position that produced it.
pub fn scatter_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    dx
}

/// Mean over all spatial positions: `[N,H,W,C] -> [N,C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("global_avg_pool", input, 4)?;
    let (n, h, w, c) = dims4(input.shape());
    let hw = h * w;
    let scale = T::one() / T::c(hw as f64);
    let mut out = vec![T::zero(); n * c];
    for b in 0..n {
        let acc = &mut out[b * c..(b + 1) * c];
        for px in input.data()[b * hw * c..(b + 1) * hw * c].chunks(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= scale;
        }
    }
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, h, w, c) = dims4(input_shape);
    let scale = T::one() / T::c((h * w) as f64);
    let g = grad_out.data();
    Tensor::from_fn(input_shape, |i| {
        let b = i / (h * w * c);
        g[b * c + i % c] * scale
    })
    .reshape(&[n, h, w, c])
    .expect("same shape")
}

/// Max over the flattened spatial positions of `[N,H,W,C]` restricted to the
/// positions marked valid in `valid` (`[N, H·W]`). A sample with no valid
/// position falls back to position 0.
pub fn masked_global_max_pool<T: Scalar>(
    input: &Tensor<T>,
    valid: &[bool],
) -> Result<(Tensor<T>, Vec<usize>)> {
    expect_rank("global_max_pool", input, 4)?;
    let (n, h, w, c) = dims4(input.shape());
    let hw = h * w;
    if valid.len() != n * hw {
        return Err(Error::shape(
            "global_max_pool",
            format!("mask length {} != {}", valid.len(), n * hw),
        ));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * c);
    let mut arg = Vec::with_capacity(n * c);
    for b in 0..n {
        let mask = &valid[b * hw..(b + 1) * hw];
        let positions: Vec<usize> = match mask.iter().any(|&m| m) {
            true => (0..hw).filter(|&p| mask[p]).collect(),
            false => vec![0],
        };
        for ch in 0..c {
            let mut best = (b * hw + positions[0]) * c + ch;
            for &p in &positions[1..] {
                let i = (b * hw + p) * c + ch;
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            arg.push(best);
        }
    }
    Ok((Tensor::new(vec![n, c], out)?, arg))
}
