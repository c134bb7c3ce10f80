//! Ephraim–Malah minimum mean-square error log-spectral amplitude enhancement.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    /// Analysis frame length in seconds.
    pub frame_secs: f64,
    /// Decision-directed smoothing of the a-priori SNR.
    pub alpha: f64,
    /// Leading frames averaged into the noise PSD estimate.
    pub init_frames: usize,
    /// Lower bound on the spectral gain.
    pub gain_floor: f64,
    /// Lower bound on the a-priori SNR (linear).
    pub xi_min: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            frame_secs: 0.032,
            alpha: 0.98,
            init_frames: 6,
            gain_floor: 0.1,
            xi_min: 10f64.powf(-25.0 / 10.0),
        }
    }
}

/// Exponential integral `E1(x) = ∫_x^∞ e^{-t}/t dt` for `x > 0`.
pub fn expint_e1(x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER - x.ln() - sum
    } else {
        // modified Lentz evaluation of the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let a = -(i as f64) * (i as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// LSA gain for a-priori SNR `xi` and a-posteriori SNR `gamma`.
pub fn lsa_gain(xi: f64, gamma: f64) -> f64 {
    let v = xi * gamma / (1.0 + xi);
    let e1 = if v < 1e-300 { 690.0 } else { expint_e1(v) };
    xi / (1.0 + xi) * (0.5 * e1).min(700.0).exp()
}

/// Denoises a clip. The noise PSD is the mean power of the first
/// `init_frames` frames, so the clip should start with non-speech.
/// Output length and sample rate equal the input's.
pub fn denoise_mmse_lsa(clip: &AudioClip, cfg: &DenoiseConfig) -> Result<AudioClip> {
    let mut frame = (cfg.frame_secs * clip.sample_rate as f64).round() as usize;
    frame += frame % 2;
    if frame < 4 {
        return Err(Error::InvalidArgument("denoise frame length too short for sample rate".into()));
    }
    if clip.samples.len() < frame {
        return Err(Error::InvalidArgument(format!(
            "clip of {} samples shorter than one {frame}-sample analysis frame",
            clip.samples.len()
        )));
    }
    let hop = frame / 2;
    let n = clip.samples.len();
    // pad so every original sample sits under two full windows
    let frames = (n + hop).div_ceil(hop);
    let padded_len = (frames + 1) * hop;
    let mut x = vec![0.0f64; padded_len];
    for (i, &s) in clip.samples.iter().enumerate() {
        x[hop + i] = s as f64;
    }
    // sqrt-Hann analysis/synthesis pair sums to one at 50% overlap
    let window: Vec<f64> = (0..frame)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / frame as f64).cos()).sqrt())
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(frame);
    let inv = planner.plan_fft_inverse(frame);
    let bins = frame / 2 + 1;

    let spectra: Vec<Vec<Complex<f64>>> = (0..frames)
        .map(|f| {
            let mut buf: Vec<Complex<f64>> = (0..frame)
                .map(|i| Complex::new(x[f * hop + i] * window[i], 0.0))
                .collect();
            fwd.process(&mut buf);
            buf
        })
        .collect();

    let init = cfg.init_frames.clamp(1, frames);
    let noise: Vec<f64> = (0..bins)
        .map(|k| {
            let p = spectra[..init].iter().map(|s| s[k].norm_sqr()).sum::<f64>() / init as f64;
            p.max(1e-20)
        })
        .collect();

    let mut out = vec![0.0f64; padded_len];
    let mut prev_amp2 = vec![0.0f64; bins];
    for (f, spec) in spectra.iter().enumerate() {
        let mut gains = vec![0.0; bins];
        for k in 0..bins {
            let gamma = spec[k].norm_sqr() / noise[k];
            let ml = (gamma - 1.0).max(0.0);
            let xi = if f == 0 {
                cfg.alpha + (1.0 - cfg.alpha) * ml
            } else {
                cfg.alpha * prev_amp2[k] / noise[k] + (1.0 - cfg.alpha) * ml
            }
            .max(cfg.xi_min);
            let g = lsa_gain(xi, gamma).clamp(cfg.gain_floor, 1.0);
            gains[k] = g;
            prev_amp2[k] = g * g * spec[k].norm_sqr();
        }
        let mut buf: Vec<Complex<f64>> = (0..frame)
            .map(|i| {
                let k = if i < bins { i } else { frame - i };
                spec[i] * gains[k]
            })
            .collect();
        inv.process(&mut buf);
        let scale = 1.0 / frame as f64;
        for i in 0..frame {
            out[f * hop + i] += buf[i].re * scale * window[i];
        }
    }
    let samples = out[hop..hop + n].iter().map(|&v| v as f32).collect();
    AudioClip::new(samples, clip.sample_rate)
}
