//! Multimodal dementia screening from speech recordings and transcripts.
//!
//! The crate covers the whole pipeline: log-mel feature extraction feeding an
//! m-VGGish segment classifier, a three-branch transcript-segment classifier,
//! segment-to-subject aggregation, weighted late fusion, and a cross-validated
//! evaluation harness with bootstrap intervals and subgroup reports.

pub mod audio;
pub mod audio_model;
pub mod container;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod subject;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod text_model;
pub mod train;

pub use error::{Error, Result};
pub use params::{LayerParams, ParamId, ParamStore};
pub use tape::{GradTape, Var};
pub use tensor::{Scalar, Tensor};
