use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ANALYSIS_RATE: u32 = 16_000;
/// Number of mel bands; fixed by the network input layout.
pub const MEL_BANDS: usize = 64;
pub const WINDOW_LEN: usize = 400;
pub const HOP_LEN: usize = 160;
pub const FFT_LEN: usize = 512;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7500.0;
pub const LOG_OFFSET: f64 = 0.01;

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Number of STFT frames for `n` samples (0 when shorter than one window).
pub fn frame_count(n: usize) -> usize {
    if n < WINDOW_LEN {
        0
    } else {
        1 + (n - WINDOW_LEN) / HOP_LEN
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Triangular mel weights `[FFT_LEN/2+1, MEL_BANDS]`, triangles defined in the
/// mel domain between equally spaced band edges; the DC bin carries no weight.
pub fn mel_matrix() -> Vec<[f64; MEL_BANDS]> {
    let bins = FFT_LEN / 2 + 1;
    let nyquist = ANALYSIS_RATE as f64 / 2.0;
    let lo = hz_to_mel(MEL_LOW_HZ);
    let hi = hz_to_mel(MEL_HIGH_HZ);
    let edges: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| lo + (hi - lo) * i as f64 / (MEL_BANDS + 1) as f64)
        .collect();
    (0..bins)
        .map(|b| {
            let mut row = [0.0; MEL_BANDS];
            if b == 0 {
                return row;
            }
            let mel = hz_to_mel(nyquist * b as f64 / (bins - 1) as f64);
            for (band, w) in row.iter_mut().enumerate() {
                let (l, c, u) = (edges[band], edges[band + 1], edges[band + 2]);
                let rising = (mel - l) / (c - l);
                let falling = (u - mel) / (u - c);
                *w = rising.min(falling).max(0.0);
            }
            row
        })
        .collect()
}

/// Reusable STFT + mel analysis state.
pub struct MelFrontend {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    mel: Vec<[f64; MEL_BANDS]>,
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFrontend {
    pub fn new() -> Self {
        Self {
            window: hann(WINDOW_LEN),
            fft: FftPlanner::new().plan_fft_forward(FFT_LEN),
            mel: mel_matrix(),
        }
    }

    /// Hann-windowed STFT magnitudes, one row of `FFT_LEN/2+1` bins per frame.
    pub fn stft_magnitude(&self, samples: &[f32]) -> Result<Vec<Vec<f64>>> {
        let frames = frame_count(samples.len());
        if frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "clip has {} samples, needs at least {WINDOW_LEN}",
                samples.len()
            )));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let frame = &samples[f * HOP_LEN..f * HOP_LEN + WINDOW_LEN];
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = match i < WINDOW_LEN {
                    true => Complex::new(frame[i] as f64 * self.window[i], 0.0),
                    false => Complex::new(0.0, 0.0),
                };
            }
            self.fft.process(&mut buf);
            out.push(buf[..FFT_LEN / 2 + 1].iter().map(|c| c.norm()).collect());
        }
        Ok(out)
    }

    /// `[T, 64]` log-mel spectrogram of a 16 kHz clip.
    pub fn logmel(&self, clip: &AudioClip) -> Result<Tensor<f32>> {
        if clip.sample_rate != ANALYSIS_RATE {
            return Err(Error::InvalidArgument(format!(
                "log-mel expects {ANALYSIS_RATE} Hz audio, got {} Hz (resample first)",
                clip.sample_rate
            )));
        }
        let mags = self.stft_magnitude(&clip.samples)?;
        let t = mags.len();
        let mut data = Vec::with_capacity(t * MEL_BANDS);
        for frame in &mags {
            let mut bands = [0.0f64; MEL_BANDS];
            for (m, row) in frame.iter().zip(&self.mel) {
                if *m == 0.0 {
                    continue;
                }
                for (acc, w) in bands.iter_mut().zip(row) {
                    *acc += m * w;
                }
            }
            data.extend(bands.iter().map(|&v| (v + LOG_OFFSET).ln() as f32));
        }
        Tensor::new(vec![t, MEL_BANDS], data)
    }
}

pub fn logmel_spectrogram(clip: &AudioClip) -> Result<Tensor<f32>> {
    MelFrontend::new().logmel(clip)
}
