use adscreen::audio::LogMelPatch;
use adscreen::audio_model::{aggregate_audio, train_audio, LabeledPatch, MVGGish, MVGGishConfig};
use adscreen::container;
use adscreen::gradcheck::{grad_check, DEFAULT_STEP};
use adscreen::train::TrainConfig;
use adscreen::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> MVGGishConfig {
    MVGGishConfig::narrowed(16)
}

fn random_patch(k: usize, rng: &mut ChaCha8Rng) -> LogMelPatch {
    LogMelPatch::new(Tensor::from_fn(&[k, 64], |_| rng.gen_range(-4.0..1.0)), "clip", 0).unwrap()
}

/// AD patches carry extra energy in the upper mel bands.
fn separable_set(n: usize, seed: u64) -> Vec<LabeledPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2 == 0;
            let frames = Tensor::from_fn(&[32, 64], |j| {
                let band = j % 64;
                let base = rng.gen_range(-1.0..-0.5);
                if label && band >= 32 { base + 2.0 } else { base }
            });
            LabeledPatch {
                patch: LogMelPatch::new(frames, format!("s{i}"), 0).unwrap(),
                label,
            }
        })
        .collect()
}

#[test]
fn equal_seeds_build_identical_models() {
    let a = MVGGish::<f32>::build(MVGGishConfig::default(), 11);
    let b = MVGGish::<f32>::build(MVGGishConfig::default(), 11);
    assert_eq!(a.params, b.params);
    let c = MVGGish::<f32>::build(MVGGishConfig::default(), 12);
    assert_ne!(a.params, c.params);
}

#[test]
fn save_load_preserves_predictions() {
    let m = MVGGish::<f32>::build(small(), 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.weights");
    container::save(&m.params, &path).unwrap();
    let back = MVGGish::<f32>::from_store(small(), container::load(&path).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = random_patch(96, &mut rng);
    assert_eq!(m.predict_segment(&p).unwrap(), back.predict_segment(&p).unwrap());
}

#[test]
fn same_parameters_serve_both_patch_lengths() {
    let m = MVGGish::<f32>::build(small(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [96, 496, 16] {
        let p = m.predict_segment(&random_patch(k, &mut rng)).unwrap();
        assert!(p > 0.0 && p < 1.0, "k={k}: {p}");
    }
}

#[test]
fn backbone_loading() {
    let src = MVGGish::<f32>::build(small(), 5);
    let mut dst = MVGGish::<f32>::build(small(), 6);
    let before = dst.params.clone();

    let loaded = dst.load_backbone(&adscreen::ParamStore::new(), false).unwrap();
    assert!(loaded.is_empty());
    assert_eq!(dst.params, before);

    let mut convs = adscreen::ParamStore::new();
    for (conv, ..) in small().conv_layers() {
        convs.push(src.params.layer(&conv).unwrap().clone()).unwrap();
    }
    dst.load_backbone(&convs, true).unwrap();
    for (conv, bn, ..) in small().conv_layers() {
        assert_eq!(dst.params.layer(&conv), src.params.layer(&conv));
        assert_eq!(dst.params.layer(&bn), before.layer(&bn));
    }
    assert_eq!(dst.params.layer("fc2"), before.layer("fc2"));

    // conv2 with one output channel too many
    let full = MVGGishConfig::default();
    let mut bad = MVGGish::<f32>::build(full.clone(), 0).params;
    let conv2 = bad.layer_mut("conv2").unwrap();
    *conv2.get_mut("weight").unwrap() = Tensor::zeros(&[3, 3, 64, 129]);
    let mut target = MVGGish::<f32>::build(full, 1);
    let snapshot = target.params.clone();
    match target.load_backbone(&bad, true) {
        Err(Error::StrictLoad(names)) => assert_eq!(names, ["conv2/weight"]),
        other => panic!("expected strict load error, got {other:?}"),
    }
    assert_eq!(target.params, snapshot);
    let err = target.load_backbone(&bad, true).unwrap_err().to_string();
    assert!(err.contains("conv2/weight"), "{err}");
}

#[test]
fn separable_training_loss_decreases() {
    let data = separable_set(60, 2);
    let mut m = MVGGish::<f32>::build(small(), 7);
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 5,
        patience: 30,
        seed: 1,
        ..TrainConfig::default()
    };
    let hist = train_audio(&mut m, &data, &[], &cfg).unwrap();
    let losses: Vec<f64> = hist.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn patience_zero_stops_at_first_non_improvement() {
    let data = separable_set(20, 3);
    let val = separable_set(8, 4);
    let mut m = MVGGish::<f32>::build(small(), 8);
    // lr 0 with frozen running stats pins every array, so epoch 1 cannot improve
    m.freeze_backbone = true;
    let cfg = TrainConfig {
        lr: 0.0,
        max_epochs: 10,
        patience: 0,
        ..TrainConfig::default()
    };
    let hist = train_audio(&mut m, &data, &val, &cfg).unwrap();
    assert!(hist.stopped_early);
    assert_eq!(hist.epochs.len(), 2);
}

#[test]
fn training_is_deterministic() {
    let data = separable_set(24, 5);
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 2,
        seed: 9,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = MVGGish::<f32>::build(small(), 10);
        train_audio(&mut m, &data, &[], &cfg).unwrap();
        m.params
    };
    assert_eq!(run(), run());
}

#[test]
fn single_class_training_is_rejected() {
    let data: Vec<LabeledPatch> = separable_set(10, 6).into_iter().filter(|s| s.label).collect();
    let mut m = MVGGish::<f32>::build(small(), 0);
    assert!(matches!(
        train_audio(&mut m, &data, &[], &TrainConfig::default()),
        Err(Error::SingleClass(_))
    ));
}

#[test]
fn frozen_backbone_only_moves_bn_affine_and_head() {
    let data = separable_set(16, 7);
    let mut m = MVGGish::<f32>::build(small(), 11);
    m.freeze_backbone = true;
    let before = m.params.clone();
    let cfg = TrainConfig {
        lr: 1e-2,
        max_epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    train_audio(&mut m, &data, &[], &cfg).unwrap();
    for (a, b) in before.layers().iter().zip(m.params.layers()) {
        for ((name, x), (_, y)) in a.arrays().zip(b.arrays()) {
            let changed = x != y;
            let may_change = (a.name.starts_with("bn") && !name.starts_with("running_")) || a.name.starts_with("fc");
            if !may_change {
                assert!(!changed, "{}/{name} changed", a.name);
            }
        }
    }
    assert_ne!(before.layer("fc2"), m.params.layer("fc2"));
}

#[test]
fn miniature_network_gradient() {
    let cfg = MVGGishConfig {
        blocks: vec![vec![3], vec![4]],
        hidden: 5,
        bn_eps: 1e-3,
    };
    for seed in 0..2 {
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
            Some(40),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures());
    }
}

proptest! {
    #[test]
    fn aggregate_is_bounded_and_order_free(mut ps in prop::collection::vec(0.0f64..1.0, 1..40)) {
        let a = aggregate_audio(&ps).unwrap();
        let lo = ps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= a && a <= hi + 1e-12);
        ps.reverse();
        prop_assert!((aggregate_audio(&ps).unwrap() - a).abs() < 1e-12);
    }
}
