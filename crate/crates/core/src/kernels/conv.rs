use serde::{Deserialize, Serialize};

use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_into, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

/// Resolved geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        expect_rank("conv2d", input, 4)?;
        expect_rank("conv2d", weight, 4)?;
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (n, h, w, cin) = dims4(input.shape());
        let (kh, kw, kcin, cout) = dims4(weight.shape());
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {cin} channels but kernel {:?} expects {kcin}",
                    weight.shape()
                ),
            ));
        }
        let (oh, pad_top) = out_extent(h, kh, stride, padding)?;
        let (ow, pad_left) = out_extent(w, kw, stride, padding)?;
        Ok(Self {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            oh,
            ow,
            stride,
            pad_top,
            pad_left,
        })
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

pub(crate) fn dims4(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

fn out_extent(size: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(size);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if size < k {
                return Err(Error::shape(
                    "conv2d",
                    format!("valid padding needs spatial extent >= {k}, got {size}"),
                ));
            }
            Ok(((size - k) / stride + 1, 0))
        }
    }
}

/// Unfolds the input into `[n·oh·ow, kh·kw·cin]` rows (zero outside the image).
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    let mut row = 0;
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        dst[off..off + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut dx = vec![T::zero(); g.n * g.h * g.w * g.cin];
    let mut row = 0;
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        for c in 0..g.cin {
                            dx[dst + c] += src[off + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// Cross-correlation of `[N,H,W,Cin]` input with a `[kh,kw,Cin,Cout]` kernel plus bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, weight, stride, padding)?;
    if bias.len() != g.cout {
        return Err(Error::shape(
            "conv2d",
            format!("bias length {} != output channels {}", bias.len(), g.cout),
        ));
    }
    let cols = im2col(input.data(), &g);
    let mut out = Vec::with_capacity(g.rows() * g.cout);
    for _ in 0..g.rows() {
        out.extend_from_slice(bias.data());
    }
    matmul_into(
        &cols,
        weight.data(),
        g.rows(),
        g.patch(),
        g.cout,
        false,
        false,
        T::one(),
        &mut out,
    );
    Tensor::new(vec![g.n, g.oh, g.ow, g.cout], out)
}

/// Gradients `(d_input, d_weight, d_bias)` of [`conv2d`] given the output gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeom::new(input, weight, stride, padding)?;
    let dy = grad_out.data();
    let mut db = vec![T::zero(); g.cout];
    for r in 0..g.rows() {
        for (acc, &v) in db.iter_mut().zip(&dy[r * g.cout..(r + 1) * g.cout]) {
            *acc += v;
        }
    }
    let cols = im2col(input.data(), &g);
    let dw = matmul(&cols, dy, g.patch(), g.rows(), g.cout, true, false);
    let dcols = matmul(dy, weight.data(), g.rows(), g.cout, g.patch(), false, true);
    let dx = col2im(&dcols, &g);
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(vec![g.cout], db)?,
    ))
}
