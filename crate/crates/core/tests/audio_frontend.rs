use std::f64::consts::PI;

use adscreen::audio::logmel::{frame_count, FFT_LEN};
use adscreen::audio::{
    denoise_mmse_lsa, load_wav, logmel_spectrogram, resample, write_wav, AudioClip, DenoiseConfig, MelFrontend,
    ANALYSIS_RATE, MEL_BANDS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: f64 = ANALYSIS_RATE as f64;

fn sine(freq: f64, rate: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate).sin()).collect()
}

fn white(n: usize, rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // uniform on [-a, a] has rms a / sqrt(3)
    let a = rms * 3f64.sqrt();
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

fn clip(x: &[f64]) -> AudioClip {
    AudioClip::new(x.iter().map(|&v| v as f32).collect(), ANALYSIS_RATE).unwrap()
}

/// Mean per-frame SNR in dB of `est` against `clean`, over frames where the
/// clean signal is present.
fn segmental_snr(clean: &[f64], est: &[f32], from: usize) -> f64 {
    let frame = 256;
    let mut total = 0.0;
    let mut count = 0;
    for start in (from..clean.len() - frame).step_by(frame) {
        let s: f64 = clean[start..start + frame].iter().map(|v| v * v).sum();
        let e: f64 = (start..start + frame).map(|i| (est[i] as f64 - clean[i]).powi(2)).sum();
        total += (10.0 * (s / e.max(1e-20)).log10()).clamp(-10.0, 35.0);
        count += 1;
    }
    total / count as f64
}

#[test]
fn denoise_improves_a_tone_in_white_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 2 * ANALYSIS_RATE as usize;
    let lead = ANALYSIS_RATE as usize / 4;
    let mut clean = vec![0.0; n];
    for (i, v) in sine(500.0, SR, n - lead, 0.2).into_iter().enumerate() {
        clean[lead + i] = v;
    }
    // 0 dB over the tone: noise rms equals tone rms
    let noise = white(n, 0.2 / 2f64.sqrt(), &mut rng);
    let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(s, w)| s + w).collect();
    let input = clip(&noisy);
    let out = denoise_mmse_lsa(&input, &DenoiseConfig::default()).unwrap();
    let before = segmental_snr(&clean, &input.samples, lead);
    let after = segmental_snr(&clean, &out.samples, lead);
    assert!((before).abs() < 0.5, "input segmental SNR {before}");
    assert!(after - before >= 3.0, "before {before:.2} dB, after {after:.2} dB");
}

#[test]
fn denoise_keeps_a_clean_tone() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = ANALYSIS_RATE as usize;
    let lead = ANALYSIS_RATE as usize / 8;
    let mut x = white(n, 1e-5, &mut rng);
    for (i, v) in sine(300.0, SR, n - lead, 0.3).into_iter().enumerate() {
        x[lead + i] += v;
    }
    let out = denoise_mmse_lsa(&clip(&x), &DenoiseConfig::default()).unwrap();
    let (a, b): (Vec<f64>, Vec<f64>) = x.iter().zip(&out.samples).map(|(&p, &q)| (p, q as f64)).unzip();
    let dot: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(dot / (na * nb) >= 0.95, "correlation {}", dot / (na * nb));
}

#[test]
fn resampled_tone_keeps_its_stft_peak() {
    let rate = 44_100;
    let src = AudioClip::new(
        sine(440.0, rate as f64, rate as usize, 0.5).into_iter().map(|v| v as f32).collect(),
        rate,
    )
    .unwrap();
    let r = resample(&src, ANALYSIS_RATE).unwrap();
    assert_eq!(r.samples.len(), ANALYSIS_RATE as usize);
    let mags = MelFrontend::new().stft_magnitude(&r.samples).unwrap();
    let mut mean = vec![0.0; FFT_LEN / 2 + 1];
    for frame in &mags {
        for (m, v) in mean.iter_mut().zip(frame) {
            *m += v;
        }
    }
    let peak = (0..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
    let expected = 440.0 * FFT_LEN as f64 / SR;
    assert!((peak as f64 - expected).abs() <= 1.0, "peak bin {peak}, expected {expected:.2}");
}

#[test]
fn wav_round_trip_through_features() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.wav");
    let c = clip(&sine(1000.0, SR, 15_360, 0.4));
    write_wav(&path, &c).unwrap();
    let back = load_wav(&path).unwrap();
    assert_eq!(back.sample_rate, ANALYSIS_RATE);
    let spec = logmel_spectrogram(&back).unwrap();
    assert_eq!(spec.shape(), &[94, MEL_BANDS]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn logmel_shape_is_t_by_64(n in 400usize..6000, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = logmel_spectrogram(&clip(&white(n, 0.1, &mut rng))).unwrap();
        prop_assert_eq!(spec.shape(), &[frame_count(n), MEL_BANDS]);
        prop_assert!(spec.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn louder_input_never_lowers_a_cell(n in 400usize..4000, gain in 1.01f64..4.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = white(n, 0.05, &mut rng);
        let loud: Vec<f64> = x.iter().map(|v| v * gain).collect();
        let a = logmel_spectrogram(&clip(&x)).unwrap();
        let b = logmel_spectrogram(&clip(&loud)).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!(q >= p, "{} -> {}", p, q);
        }
    }

    #[test]
    fn denoise_preserves_length_and_rate(n in 512usize..5000, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = clip(&white(n, 0.1, &mut rng));
        let out = denoise_mmse_lsa(&c, &DenoiseConfig::default()).unwrap();
        prop_assert_eq!(out.samples.len(), n);
        prop_assert_eq!(out.sample_rate, ANALYSIS_RATE);
    }
}
