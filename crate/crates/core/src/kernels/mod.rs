//! Pure forward/backward kernels. Every forward has a matching backward; the
//! tape in [`crate::tape`] wires them together.
//!
//! Layout is row-major `[batch, height, width, channels]` throughout.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{gelu, relu, sigmoid, Activation};
pub use conv::{conv2d, Padding};
pub use dense::dense;
pub use loss::bce_loss;
pub use norm::{batchnorm, BnMode};
pub use pool::{global_avg_pool, maxpool2d};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn expect_rank<T: crate::tensor::Scalar>(
    op: &'static str,
    t: &Tensor<T>,
    rank: usize,
) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}
