//! Raw audio to `k×64` log-mel patches.

pub mod denoise;
pub mod logmel;
pub mod patches;
pub mod resample;
pub mod wav;

pub use denoise::{denoise_mmse_lsa, DenoiseConfig};
pub use logmel::{logmel_spectrogram, MelFrontend, ANALYSIS_RATE, MEL_BANDS};
pub use patches::{partition_patches, LogMelPatch, SegmentKind};
pub use resample::resample;
pub use wav::{load_wav, write_wav};

use crate::error::{Error, Result};

/// Mono PCM samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Empty("audio clip"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
