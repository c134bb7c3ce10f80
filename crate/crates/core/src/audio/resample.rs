use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side of the output instant.
const HALF_ZEROS: f64 = 24.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel. The output has
/// `round(len · target / source)` samples; equal rates return the input unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = ((clip.samples.len() as f64 * ratio).round() as usize).max(1);
    // cutoff relative to the input Nyquist; downsampling lowers it to the output Nyquist
    let cutoff = ratio.min(1.0) * 0.97;
    let half_width = HALF_ZEROS / cutoff;
    let x = &clip.samples;
    let samples = (0..out_len)
        .map(|n| {
            let center = n as f64 / ratio;
            let lo = (center - half_width).ceil().max(0.0) as usize;
            let hi = ((center + half_width).floor() as usize).min(x.len() - 1);
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let t = center - k as f64;
                acc += xk as f64 * cutoff * sinc(cutoff * t) * blackman(t / half_width);
            }
            acc as f32
        })
        .collect();
    AudioClip::new(samples, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on `[-1, 1]`.
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let p = PI * (u + 1.0);
    0.42 - 0.5 * p.cos() + 0.08 * (2.0 * p).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> AudioClip {
        let n = (rate as f64 * secs) as usize;
        AudioClip::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5).collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let c = tone(300.0, 16000, 0.1);
        assert_eq!(resample(&c, 16000).unwrap(), c);
    }

    #[test]
    fn upsampling_doubles_length() {
        let c = tone(300.0, 8000, 1.0);
        let r = resample(&c, 16000).unwrap();
        assert_eq!(r.samples.len(), 16000);
        assert_eq!(r.sample_rate, 16000);
    }

    #[test]
    fn interior_of_resampled_tone_tracks_the_ideal_tone() {
        let c = tone(440.0, 44100, 0.2);
        let r = resample(&c, 16000).unwrap();
        let ideal = tone(440.0, 16000, 0.2);
        let n = r.samples.len().min(ideal.samples.len());
        for i in 200..n - 200 {
            assert!((r.samples[i] - ideal.samples[i]).abs() < 5e-3, "sample {i}");
        }
    }
}
