//! Acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line to stderr before asserting.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use adscreen::audio::logmel::{frame_count, hann, mel_matrix, FFT_LEN, HOP_LEN, LOG_OFFSET, WINDOW_LEN};
use adscreen::audio::{logmel_spectrogram, partition_patches, AudioClip, LogMelPatch, MelFrontend, ANALYSIS_RATE};
use adscreen::audio_model::{MVGGish, MVGGishConfig};
use adscreen::eval::{bootstrap_ci, compute_metrics, render_subgroups, roc_auc, subgroup_report, BootstrapConfig, Metric};
use adscreen::fusion::{late_fuse, SubjectPrediction, TEXT_ONLY_WEIGHT};
use adscreen::gradcheck::{grad_check, DEFAULT_STEP};
use adscreen::pipeline::{cross_validate, load_corpus, synth_corpus, RunConfig};
use adscreen::subject::{Gender, Label};
use adscreen::text::{segment_tokens, Vocab, WordVectorTable};
use adscreen::text_model::{training_words, EncoderConfig, MiniEncoder, TextModel, TextModelConfig, TextSample};
use adscreen::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria run one at a time so each runtime budget measures that criterion alone.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes to the stderr handle directly so the line shows up even when the
/// test harness captures output.
fn verdict(n: u32, name: &str, ok: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let ok = ok && elapsed <= budget;
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n:>2} {}: {name} ({detail}; {:.2}s of {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn random_patch(k: usize, rng: &mut ChaCha8Rng) -> LogMelPatch {
    LogMelPatch::new(Tensor::from_fn(&[k, 64], |_| rng.gen_range(-4.6..2.0)), "random", 0).unwrap()
}

fn random_preds(n: usize, rng: &mut ChaCha8Rng) -> Vec<SubjectPrediction> {
    (0..n)
        .map(|i| {
            let ad = rng.gen_bool(0.5);
            SubjectPrediction {
                subject_id: format!("s{i}"),
                label: Label::from(ad),
                p_a: Some(rng.gen_range(0.0..1.0)),
                p_t: Some(rng.gen_range(0.0..1.0)),
                age: Some(rng.gen_range(46..=95)),
                gender: Some(if rng.gen_bool(0.55) { Gender::Female } else { Gender::Male }),
                source: None,
            }
        })
        .collect()
}

#[test]
fn c01_parameter_count() {
    let _serial = serial();
    let t = Instant::now();
    let n = MVGGish::<f32>::build(MVGGishConfig::default(), 0).parameter_count();
    let ok = (4_700_000..=4_900_000).contains(&n);
    verdict(1, "m-VGGish parameter count", ok, t.elapsed(), Duration::from_secs(1), &format!("{n} parameters"));
}

#[test]
fn c02_one_model_serves_both_patch_lengths() {
    let _serial = serial();
    let t = Instant::now();
    let m = MVGGish::<f32>::build(MVGGishConfig::default(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut all = Vec::new();
    for k in [96, 496] {
        let patches: Vec<LogMelPatch> = (0..100).map(|_| random_patch(k, &mut rng)).collect();
        for chunk in patches.chunks(10) {
            let refs: Vec<&LogMelPatch> = chunk.iter().collect();
            all.extend(m.predict_patches(&refs).unwrap());
        }
    }
    let inside = all.iter().filter(|p| **p > 0.0 && **p < 1.0).count();
    let ok = all.len() == 200 && inside == 200;
    verdict(
        2,
        "96x64 and 496x64 patches through one full-size instance",
        ok,
        t.elapsed(),
        Duration::from_secs(30),
        &format!("{inside}/200 outputs in (0,1)"),
    );
}

fn audio_gradient(seed: u64) -> f64 {
    let cfg = MVGGishConfig {
        blocks: vec![vec![3], vec![4]],
        hidden: 5,
        bn_eps: 1e-3,
    };
    let m = MVGGish::<f64>::build(cfg.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let patches: Vec<LogMelPatch> = (0..3).map(|_| random_patch(8, &mut rng)).collect();
    let refs: Vec<&LogMelPatch> = patches.iter().collect();
    let x = m.batch_input(&refs).unwrap();
    let report = grad_check(
        &m.params,
        |s, t| {
            let net = MVGGish {
                config: cfg.clone(),
                params: s.clone(),
                freeze_backbone: false,
            };
            let xi = t.input(x.clone());
            let p = net.probabilities(t, xi, true)?;
            t.bce(p, &[1.0, 0.0, 1.0], 1e-7)
        },
        DEFAULT_STEP,
        1e-4,
        None,
    )
    .unwrap();
    report.max_rel_error()
}

fn text_gradient(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["the", "boy", "uh", "cookie", "jar", "um", "falls", "mother", "sink", "water", "er"];
    let batch: Vec<TextSample> = (0..2)
        .flat_map(|i| {
            let toks: Vec<String> = (0..rng.gen_range(9..16)).map(|_| words.choose(&mut rng).unwrap().to_string()).collect();
            TextSample::from_transcript(&format!("t{i}"), toks, i % 2 == 0).unwrap()
        })
        .collect();
    let vocab_words = training_words(&batch);
    // half the words stay out of the trainable table so the fixed OOV vector is used too
    let kept: Vec<String> = vocab_words.iter().step_by(2).cloned().collect();
    let table = WordVectorTable::random(vocab_words.iter().map(String::as_str), 5, seed).unwrap();
    let vocab = Vocab::build(vocab_words.iter().map(String::as_str));
    let cfg = TextModelConfig {
        cnn_filters: 3,
        cnn_out: 4,
        transcript_subwords: 24,
        ..TextModelConfig::default()
    };
    let encoder = |len: usize, name: &str| {
        let mut e = EncoderConfig::new(vocab.len(), 4, len);
        e.heads = 2;
        e.ffn = 6;
        e.layers = 1;
        Box::new(MiniEncoder::new(e, name).unwrap())
    };
    let ctx = encoder(cfg.segment_subwords, "ctx");
    let sent = encoder(cfg.transcript_subwords, "sent");
    let mut m = TextModel::<f64>::build(cfg, kept, table, vocab, ctx, sent, seed).unwrap();
    m.freeze.sentence = false;
    let refs: Vec<&TextSample> = batch.iter().collect();
    let target: Vec<f64> = batch.iter().map(|s| if s.label { 1.0 } else { 0.0 }).collect();
    let report = grad_check(
        &m.params,
        |s, t| {
            let p = m.forward_with(s, t, &refs, true)?;
            t.bce(p, &target, 1e-7)
        },
        DEFAULT_STEP,
        1e-4,
        Some(40),
    )
    .unwrap();
    report.max_rel_error()
}

#[test]
fn c03_gradient_verification() {
    let _serial = serial();
    let t = Instant::now();
    let audio: Vec<f64> = (0..5).map(audio_gradient).collect();
    let text: Vec<f64> = (0..5).map(text_gradient).collect();
    let worst = audio.iter().chain(&text).fold(0.0f64, |a, &b| a.max(b));
    verdict(
        3,
        "analytic vs central-difference gradients, 5 seeds",
        worst <= 1e-4,
        t.elapsed(),
        Duration::from_secs(120),
        &format!("max relative error {worst:.2e}"),
    );
}

/// Direct O(N^2) DFT of each Hann-windowed, zero-padded frame.
fn brute_force_logmel(samples: &[f32]) -> Vec<Vec<f64>> {
    let win = hann(WINDOW_LEN);
    let bins = FFT_LEN / 2 + 1;
    let mel = mel_matrix();
    (0..frame_count(samples.len()))
        .map(|f| {
            let frame = &samples[f * HOP_LEN..f * HOP_LEN + WINDOW_LEN];
            let mut bands = vec![0.0; 64];
            for (k, row) in mel.iter().enumerate().take(bins) {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, (&x, w)) in frame.iter().zip(&win).enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / FFT_LEN as f64;
                    re += x as f64 * w * ang.cos();
                    im += x as f64 * w * ang.sin();
                }
                let mag = re.hypot(im);
                for (b, w) in bands.iter_mut().zip(row) {
                    *b += mag * w;
                }
            }
            bands.iter().map(|b| (b + LOG_OFFSET).ln()).collect()
        })
        .collect()
}

#[test]
fn c04_logmel_matches_brute_force_dft() {
    let _serial = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut frames = 0;
    for _ in 0..20 {
        let n = rng.gen_range(WINDOW_LEN..=ANALYSIS_RATE as usize);
        let f0 = rng.gen_range(100.0..7000.0);
        let gain = rng.gen_range(0.01..0.9);
        let samples: Vec<f32> = (0..n)
            .map(|i| {
                let tone = (2.0 * PI * f0 * i as f64 / ANALYSIS_RATE as f64).sin();
                (gain * (0.6 * tone + 0.4 * rng.gen_range(-1.0..1.0))) as f32
            })
            .collect();
        let clip = AudioClip::new(samples, ANALYSIS_RATE).unwrap();
        let got = logmel_spectrogram(&clip).unwrap();
        let want = brute_force_logmel(&clip.samples);
        assert_eq!(got.shape(), &[want.len(), 64]);
        for (g, w) in got.data().chunks(64).zip(&want) {
            for (a, b) in g.iter().zip(w) {
                worst = worst.max((*a as f64 - b).abs() / b.abs().max(1e-3));
            }
        }
        frames += want.len();
    }
    let mut silent = true;
    let floor = LOG_OFFSET.ln() as f32;
    for n in [400, 561, 16000] {
        let clip = AudioClip::new(vec![0.0; n], ANALYSIS_RATE).unwrap();
        silent &= MelFrontend::new().logmel(&clip).unwrap().data().iter().all(|&v| v == floor);
    }
    verdict(
        4,
        "log-mel vs brute-force DFT on 20 random clips, silence = ln(0.01)",
        worst <= 1e-3 && silent,
        t.elapsed(),
        Duration::from_secs(60),
        &format!("{frames} frames, max relative error {worst:.2e}, silence exact: {silent}"),
    );
}

#[test]
fn c05_segmentation_laws() {
    let _serial = serial();
    let t = Instant::now();
    let mut ok = true;
    for len in 7..=200usize {
        let toks: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
        let segs = segment_tokens(&toks, "x").unwrap();
        ok &= segs.len() == 1 + (len - 7).div_ceil(4);
        ok &= segs.windows(2).all(|p| p[0].tokens[4..7] == p[1].tokens[0..3]);
        ok &= segs.windows(2).all(|p| p[1].start == p[0].start + 4);
    }
    for len in 1..=1100usize {
        let spec = Tensor::<f32>::zeros(&[len, 64]);
        for k in [96, 496] {
            ok &= partition_patches(&spec, k, "x").unwrap().len() == len / k;
        }
    }
    verdict(
        5,
        "token-segment count, 3-token overlap, patch count",
        ok,
        t.elapsed(),
        Duration::from_secs(5),
        "T in 7..=200 for segments, T in 1..=1100 for patches",
    );
}

#[test]
fn c06_fusion_algebra() {
    let _serial = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = true;
    let mut max_dev = 0.0f64;
    for _ in 0..50 {
        let preds = random_preds(rng.gen_range(2..200), &mut rng);
        let labels: Vec<bool> = preds.iter().map(|p| p.is_ad()).collect();
        let only = |f: fn(&SubjectPrediction) -> f64| -> Vec<(f64, bool)> {
            preds.iter().map(f).zip(labels.iter().copied()).collect()
        };
        let audio = only(|p| p.p_a.unwrap());
        let text = only(|p| p.p_t.unwrap());
        let fused = |w: f64| -> Vec<(f64, bool)> { preds.iter().map(|p| p.p_c(w).unwrap()).zip(labels.iter().copied()).collect() };
        let (f0, finf) = (fused(0.0), fused(TEXT_ONLY_WEIGHT));
        for ((a, _), (b, _)) in finf.iter().zip(&text) {
            max_dev = max_dev.max((a - b).abs());
        }
        ok &= f0 == audio;
        ok &= compute_metrics(&f0, 0.5).unwrap() == compute_metrics(&audio, 0.5).unwrap();
        ok &= compute_metrics(&finf, 0.5).unwrap() == compute_metrics(&text, 0.5).unwrap();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            ok &= roc_auc(&finf).unwrap().auc == roc_auc(&text).unwrap().auc;
        }
    }
    let mut monotone = 0;
    for _ in 0..10_000 {
        let (pa, w) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..100.0));
        let (x, y) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let (a, b) = (late_fuse(pa, lo, w).unwrap(), late_fuse(pa, hi, w).unwrap());
        let between = a >= pa.min(lo) - 1e-15 && a <= pa.max(lo) + 1e-15;
        if a <= b && between {
            monotone += 1;
        }
    }
    ok &= monotone == 10_000 && max_dev <= 1e-13;
    verdict(
        6,
        "fusion endpoints and monotonicity in p_t",
        ok,
        t.elapsed(),
        Duration::from_secs(5),
        &format!("50 files, max |p_c(1e14) - p_t| = {max_dev:.1e}, {monotone}/10000 monotone triples"),
    );
}

fn pairwise_auc(scored: &[(f64, bool)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for a in scored.iter().filter(|s| s.1) {
        for b in scored.iter().filter(|s| !s.1) {
            den += 1.0;
            num += match a.0.partial_cmp(&b.0).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    num / den
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}

#[test]
fn c07_metrics_oracle() {
    let _serial = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ok = true;
    let mut auc_sets = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        // coarse grid half the time so ties occur
        let coarse = rng.gen_bool(0.5);
        let scored: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let s = if coarse { rng.gen_range(0..5) as f64 / 4.0 } else { rng.gen_range(0.0..1.0) };
                (s, rng.gen_bool(0.5))
            })
            .collect();
        let th = 0.5;
        let tp = scored.iter().filter(|(s, y)| *s >= th && *y).count();
        let fp = scored.iter().filter(|(s, y)| *s >= th && !*y).count();
        let tn = scored.iter().filter(|(s, y)| *s < th && !*y).count();
        let fn_ = scored.iter().filter(|(s, y)| *s < th && *y).count();
        let m = compute_metrics(&scored, th).unwrap();
        ok &= (m.accuracy - (tp + tn) as f64 / n as f64).abs() <= 1e-12;
        ok &= close(m.f1, ratio(2 * tp, 2 * tp + fp + fn_));
        ok &= close(m.specificity, ratio(tn, tn + fp));
        ok &= close(m.sensitivity, ratio(tp, tp + fn_));
        let both = scored.iter().any(|s| s.1) && scored.iter().any(|s| !s.1);
        match roc_auc(&scored) {
            Ok(r) if both => {
                auc_sets += 1;
                ok &= (r.auc - pairwise_auc(&scored)).abs() <= 1e-12;
                let cubed: Vec<(f64, bool)> = scored.iter().map(|&(s, y)| (s * s * s, y)).collect();
                let shifted: Vec<(f64, bool)> = scored.iter().map(|&(s, y)| ((3.0 * s).exp() - 7.0, y)).collect();
                ok &= (roc_auc(&cubed).unwrap().auc - r.auc).abs() <= 1e-12;
                ok &= (roc_auc(&shifted).unwrap().auc - r.auc).abs() <= 1e-12;
            }
            Ok(_) => ok = false,
            Err(_) => ok &= !both,
        }
    }
    verdict(
        7,
        "metrics and AUC vs confusion-matrix and pairwise oracles",
        ok,
        t.elapsed(),
        Duration::from_secs(60),
        &format!("1000 sets, {auc_sets} with both classes"),
    );
}

#[test]
fn c08_bootstrap_determinism() {
    let _serial = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scored: Vec<(f64, bool)> = (0..100).map(|i| (rng.gen_range(0.0..1.0), i % 2 == 0)).collect();
    let cfg = BootstrapConfig {
        resamples: 1000,
        seed: 11,
        ..BootstrapConfig::default()
    };
    let acc = |s: &[(f64, bool)]| Metric::Accuracy.eval(s, 0.5);
    let auc = |s: &[(f64, bool)]| Metric::Auc.eval(s, 0.5);
    let a = bootstrap_ci(&scored, acc, &cfg).unwrap();
    let b = bootstrap_ci(&scored, acc, &cfg).unwrap();
    let other = bootstrap_ci(&scored, acc, &BootstrapConfig { seed: 12, ..cfg.clone() }).unwrap();
    let c = bootstrap_ci(&scored, auc, &cfg).unwrap();
    let d = bootstrap_ci(&scored, auc, &cfg).unwrap();
    let correct: Vec<(f64, bool)> = (0..60).map(|i| if i % 2 == 0 { (0.9, true) } else { (0.1, false) }).collect();
    let perfect = bootstrap_ci(&correct, acc, &cfg).unwrap();
    let ok = a == b && c == d && a != other && a.lo <= a.hi && perfect.lo == 1.0 && perfect.hi == 1.0;
    verdict(
        8,
        "1000-resample bootstrap CI reproducible and degenerate when all correct",
        ok,
        t.elapsed(),
        Duration::from_secs(30),
        &format!(
            "accuracy [{:.3}, {:.3}], all-correct [{}, {}]",
            a.lo, a.hi, perfect.lo, perfect.hi
        ),
    );
}

#[test]
fn c09_end_to_end_synthetic_separability() {
    let _serial = serial();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(80, 1, dir.path()).unwrap();
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("seed", "1"),
        ("lr", "1e-3"),
        ("audio_width_div", "8"),
        ("encoder_dim", "32"),
        ("word_dim", "32"),
        ("bn_momentum", "0.9"),
        ("max_epochs", "30"),
        ("patience", "5"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let corpus = load_corpus(&manifest, &cfg, None).unwrap();
    let cv = cross_validate(&corpus, &cfg).unwrap();
    let acc = |w: f64| cv.report.pooled_at(w).unwrap().result.metrics.accuracy;
    let best = acc(cv.report.best_weight);
    let (audio, text) = (acc(0.0), acc(TEXT_ONLY_WEIGHT));
    let ok = cv.report.folds.len() == 10 && best >= 0.90 && best >= audio.max(text) - 0.02;
    verdict(
        9,
        "synthetic corpus n=80, 10-fold, both branches and fusion",
        ok,
        t.elapsed(),
        Duration::from_secs(20 * 60),
        &format!("best w {} accuracy {best:.3}, audio {audio:.3}, text {text:.3}", cv.report.best_weight),
    );
}

#[test]
fn c10_subgroup_report_shape() {
    let _serial = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let preds = random_preds(477, &mut rng);
    let r = subgroup_report(&preds, 1.0, 0.5).unwrap();
    let bins: Vec<&str> = r.age.iter().map(|row| row.group.as_str()).collect();
    let fraction_sum: f64 = r.age.iter().map(|row| row.fraction).sum();
    let count_sum: usize = r.age.iter().map(|row| row.count).sum();
    let genders: Vec<&str> = r.gender.iter().map(|row| row.group.as_str()).collect();
    let gender_cols = r.gender.iter().all(|row| {
        row.metrics
            .as_ref()
            .is_some_and(|m| m.specificity.is_some() && m.sensitivity.is_some() && m.f1.is_some())
    });
    let table = render_subgroups(&r);
    let header_ok = ["fraction", "count", "accuracy", "specificity", "sensitivity", "F1"]
        .iter()
        .all(|c| table.lines().next().unwrap().contains(c));
    let ok = bins == ["46-55", "56-65", "66-75", "76-85", "86-95"]
        && (fraction_sum - 1.0).abs() <= 1e-12
        && count_sum == 477
        && genders == ["female", "male"]
        && gender_cols
        && header_ok;
    verdict(
        10,
        "age-bin and gender subgroup tables",
        ok,
        t.elapsed(),
        Duration::from_secs(5),
        &format!("bins {bins:?}, fractions sum {fraction_sum:.6}, genders {genders:?}"),
    );
}
