use std::sync::Arc;

use adscreen::gradcheck::{grad_check, DEFAULT_STEP};
use adscreen::params::ParamStore;
use adscreen::tape::GradTape;
use adscreen::text::{wordpiece_tokenize, TranscriptSegment, Vocab, WordVectorTable, PAD};
use adscreen::text_model::{
    aggregate_text, train_text, training_words, EmbedQuery, Embedder, EncoderConfig, FileEmbedder, FreezeFlags,
    MiniEncoder, TextModel, TextModelConfig, TextSample, TranscriptInput,
};
use adscreen::train::TrainConfig;
use adscreen::{Error, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONTENT: &[&str] = &[
    "the", "boy", "is", "on", "stool", "cookie", "jar", "mother", "washing", "dishes", "water", "sink", "girl",
    "reaching", "for", "and", "falling", "over", "window", "curtains", "plate", "kitchen", "she", "he",
];
const FILLERS: &[&str] = &["uh", "um", "mhm", "er", "hm"];

/// Transcript whose tokens are fillers with probability `density`.
fn transcript(n: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..n)
        .map(|_| {
            let pool = if rng.gen_bool(density) { FILLERS } else { CONTENT };
            pool.choose(rng).unwrap().to_string()
        })
        .collect()
}

fn corpus(n_subjects: usize, seed: u64) -> Vec<Vec<TextSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_subjects)
        .map(|i| {
            let ad = i % 2 == 0;
            let len = rng.gen_range(30..60);
            let toks = transcript(len, if ad { 0.4 } else { 0.05 }, &mut rng);
            TextSample::from_transcript(&format!("s{seed}_{i}"), toks, ad).unwrap()
        })
        .collect()
}

fn vocab_for(words: &[String]) -> Vocab {
    Vocab::build(words.iter().map(String::as_str).chain(FILLERS.iter().copied()))
}

fn desk_model<T: adscreen::Scalar>(samples: &[TextSample], dim: usize, word_dim: usize, seed: u64) -> TextModel<T> {
    let words = training_words(samples);
    let table = WordVectorTable::random(words.iter().map(String::as_str), word_dim, seed).unwrap();
    let vocab = vocab_for(&words);
    TextModel::with_mini_encoders(TextModelConfig::default(), words, table, vocab, dim, seed).unwrap()
}

fn flat(c: &[Vec<TextSample>]) -> Vec<TextSample> {
    c.iter().flatten().cloned().collect()
}

#[test]
fn default_dimensions() {
    let data = flat(&corpus(4, 1));
    let words = training_words(&data);
    let table = WordVectorTable::random(words.iter().map(String::as_str), 300, 1).unwrap();
    let m: TextModel = TextModel::with_mini_encoders(TextModelConfig::default(), words, table, vocab_for(&[]), 128, 0)
        .unwrap();
    assert_eq!(m.concat_dim(), 64 + 128 + 128);
    let refs: Vec<&TranscriptSegment> = data.iter().take(3).map(|s| &s.segment).collect();
    let mut tape = GradTape::new();
    let v = m.cnn_forward(&m.params, &mut tape, &refs).unwrap();
    assert_eq!(tape.value(v).shape(), &[3, 64]);
}

#[test]
fn cnn_ignores_appended_padding() {
    let data = flat(&corpus(4, 2));
    let words = training_words(&data);
    let table = WordVectorTable::random(words.iter().map(String::as_str), 12, 2).unwrap();
    let build = |max_tokens| {
        let cfg = TextModelConfig {
            max_tokens,
            ..TextModelConfig::default()
        };
        TextModel::<f64>::with_mini_encoders(cfg, words.clone(), table.clone(), vocab_for(&words), 8, 5).unwrap()
    };
    let (a, b) = (build(8), build(13));
    assert_eq!(a.params.layer("cnn_w3"), b.params.layer("cnn_w3"));
    let segs: Vec<&TranscriptSegment> = data.iter().map(|s| &s.segment).collect();
    let run = |m: &TextModel<f64>| {
        let mut t = GradTape::new();
        let v = m.cnn_forward(&m.params, &mut t, &segs).unwrap();
        t.value(v).clone()
    };
    assert_eq!(run(&a), run(&b));
}

#[test]
fn all_pad_segment_depends_only_on_biases() {
    let data = flat(&corpus(2, 3));
    let m = desk_model::<f32>(&data, 8, 10, 3);
    let pad = TranscriptSegment {
        tokens: vec![PAD.to_string(); 7],
        start: 0,
        real: 0,
        transcript_id: "z".into(),
    };
    let mut t = GradTape::new();
    let v = m.cnn_forward(&m.params, &mut t, &[&pad, &pad]).unwrap();
    let out = t.value(v);
    assert_eq!(out.row(0), out.row(1));
    // with zero input every conv output is relu(bias), so the projection sees constants
    let mut zeroed = m.params.clone();
    for w in [2, 3, 4] {
        zeroed.layer_mut(&format!("cnn_w{w}")).unwrap().get_mut("weight").unwrap().data_mut().fill(0.0);
    }
    let mut t2 = GradTape::new();
    let v2 = m.cnn_forward(&zeroed, &mut t2, &[&pad]).unwrap();
    assert_eq!(t2.value(v2).row(0), out.row(0));
}

#[test]
fn contextual_embedding_semantics() {
    let words: Vec<String> = CONTENT.iter().map(|s| s.to_string()).collect();
    let vocab = vocab_for(&words);
    let enc = MiniEncoder::new(EncoderConfig::new(vocab.len(), 16, 16), "ctx").unwrap();
    let mut store = ParamStore::<f64>::new();
    for l in enc.init_params(&mut ChaCha8Rng::seed_from_u64(4)) {
        store.push(l).unwrap();
    }
    let toks = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let embed = |ids: &adscreen::text::SubwordIds| {
        let mut t = GradTape::new();
        let q = EmbedQuery {
            transcript_id: "t",
            start: Some(0),
            ids,
        };
        let v = Embedder::<f64>::embed(&enc, &store, &mut t, &[q]).unwrap();
        t.value(v).data().to_vec()
    };

    // only [CLS] and [SEP] unmasked
    let empty = wordpiece_tokenize(&toks(&[PAD, PAD]), &vocab, 16).unwrap();
    assert_eq!(empty.mask.iter().filter(|&&m| m).count(), 2);
    let mut t = GradTape::new();
    let states = enc.encode(&store, &mut t, &empty.ids, &empty.mask, 1).unwrap();
    let s = t.value(states);
    let mean: Vec<f64> = (0..16).map(|j| 0.5 * (s.data()[j] + s.data()[16 + j])).collect();
    let e = embed(&empty);
    for (a, b) in e.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }

    let a = wordpiece_tokenize(&toks(&["the", "boy", "is"]), &vocab, 16).unwrap();
    let swapped = wordpiece_tokenize(&toks(&["boy", "the", "is"]), &vocab, 16).unwrap();
    assert_eq!(embed(&a), embed(&a));
    assert_ne!(embed(&a), embed(&swapped));
}

#[test]
fn sentence_embedding_cache_and_constancy() {
    let c = corpus(3, 5);
    let data = flat(&c);
    let m = desk_model::<f32>(&data, 8, 10, 5);
    assert_eq!(m.sentence.encoder_calls(), 0);
    let refs: Vec<&TextSample> = data.iter().collect();
    m.classify_segments(&refs).unwrap();
    assert_eq!(m.sentence.encoder_calls(), 3);
    m.classify_segments(&refs).unwrap();
    assert_eq!(m.sentence.encoder_calls(), 3);
    m.sentence.invalidate();
    m.classify_segments(&refs[..2]).unwrap();
    assert_eq!(m.sentence.encoder_calls(), 4);

    // the sentence vector is identical for all segments of one transcript
    let mut t = GradTape::new();
    let first: Vec<&TextSample> = c[0].iter().collect();
    let f = m.concat_features(&m.params, &mut t, &first).unwrap();
    let docs = m.sentence.dim();
    let concat = t.value(f).clone();
    let width = concat.shape()[1];
    let tail = |r: usize| concat.data()[r * width + width - docs..(r + 1) * width].to_vec();
    for r in 1..first.len() {
        assert_eq!(tail(r), tail(0));
    }

    // distinct transcripts give distinct vectors
    let (x, y) = (&c[0][0], &c[1][0]);
    let mut t = GradTape::new();
    let f = m.concat_features(&m.params, &mut t, &[x, y]).unwrap();
    let v = t.value(f);
    let w = v.shape()[1];
    assert_ne!(v.data()[w - docs..w], v.data()[2 * w - docs..2 * w]);
}

#[test]
fn zeroed_sentence_encoder_yields_final_beta() {
    let data = flat(&corpus(2, 6));
    let mut m = desk_model::<f64>(&data, 8, 10, 6);
    let v: Vec<f64> = (0..8).map(|i| i as f64 * 0.25 - 1.0).collect();
    let mut params = m.params.clone();
    for layer in params.layers_mut() {
        if !layer.name.starts_with("sent") {
            continue;
        }
        let last = layer.name == "sent_block2";
        for (name, t) in layer.arrays_mut() {
            let fill = if last && name == "ln2_beta" { None } else { Some(0.0) };
            match fill {
                Some(z) => t.data_mut().fill(z),
                None => t.data_mut().copy_from_slice(&v),
            }
        }
    }
    m.set_params(params).unwrap();
    let t = &data[0].transcript;
    let ids = m.transcript_subwords(&t.tokens).unwrap();
    let mut tape = GradTape::new();
    let q = EmbedQuery {
        transcript_id: &t.id,
        start: None,
        ids: &ids,
    };
    let e = m.sentence.embed(&m.params, &mut tape, &[q], true).unwrap();
    // a weighted mean of identical rows, exact up to summation rounding
    for (a, b) in tape.value(e).data().iter().zip(&v) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn classify_range_and_zero_head() {
    let data = flat(&corpus(4, 7));
    let mut m = desk_model::<f32>(&data, 8, 10, 7);
    for s in &data {
        let p = m.classify_segment(s).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
    let mut params = m.params.clone();
    params.layer_mut("head_out").unwrap().get_mut("weight").unwrap().data_mut().fill(0.0);
    *params.layer_mut("head_out").unwrap().get_mut("bias").unwrap() = Tensor::new(vec![1], vec![0.7]).unwrap();
    m.set_params(params).unwrap();
    let want = 1.0 / (1.0 + (-0.7f64).exp());
    for s in &data {
        assert!((m.classify_segment(s).unwrap() - want).abs() < 1e-6);
    }
}

#[test]
fn file_embedder_is_a_drop_in_replacement() {
    let c = corpus(3, 8);
    let data = flat(&c);
    let words = training_words(&data);
    let table = WordVectorTable::random(words.iter().map(String::as_str), 10, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ctx = FileEmbedder::new(6).unwrap();
    let mut sent = FileEmbedder::new(5).unwrap();
    for s in &data {
        ctx.insert(&s.transcript.id, Some(s.segment.start), (0..6).map(|_| rng.gen()).collect()).unwrap();
        if sent.get(&s.transcript.id, None).is_err() {
            sent.insert(&s.transcript.id, None, (0..5).map(|_| rng.gen()).collect()).unwrap();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    ctx.save(&dir.path().join("ctx.emb")).unwrap();
    let ctx = FileEmbedder::load(&dir.path().join("ctx.emb")).unwrap();
    let m: TextModel = TextModel::build(
        TextModelConfig::default(),
        words.clone(),
        table,
        vocab_for(&words),
        Box::new(ctx),
        Box::new(sent),
        1,
    )
    .unwrap();
    assert_eq!(m.concat_dim(), 64 + 6 + 5);
    let refs: Vec<&TextSample> = data.iter().collect();
    for p in m.classify_segments(&refs).unwrap() {
        assert!(p > 0.0 && p < 1.0);
    }
    let stranger = TextSample {
        transcript: Arc::new(TranscriptInput {
            id: "nobody".into(),
            tokens: vec!["the".into()],
        }),
        ..data[0].clone()
    };
    match m.classify_segment(&stranger) {
        Err(Error::MissingEmbedding(k)) => assert!(k.contains("nobody"), "{k}"),
        other => panic!("expected missing embedding, got {other:?}"),
    }
}

#[test]
fn freezing_everything_moves_only_the_head() {
    let data = flat(&corpus(6, 10));
    let mut m = desk_model::<f32>(&data, 8, 10, 10);
    m.freeze = FreezeFlags::all();
    let before = m.params.clone();
    let cfg = TrainConfig {
        lr: 1e-2,
        max_epochs: 1,
        ..TrainConfig::default()
    };
    train_text(&mut m, &data, &[], &cfg).unwrap();
    for (a, b) in before.layers().iter().zip(m.params.layers()) {
        let head = a.name.starts_with("head_");
        if !head {
            assert_eq!(a, b, "{} changed", a.name);
        }
    }
    assert_ne!(before.layer("head_out"), m.params.layer("head_out"));
    assert_ne!(before.layer("head_bn"), m.params.layer("head_bn"));
}

#[test]
fn text_training_is_deterministic_and_needs_both_classes() {
    let data = flat(&corpus(4, 11));
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = desk_model::<f32>(&data, 8, 10, 12);
        train_text(&mut m, &data, &[], &cfg).unwrap();
        m.params
    };
    assert_eq!(run(), run());
    let ad: Vec<TextSample> = data.iter().filter(|s| s.label).cloned().collect();
    let mut m = desk_model::<f32>(&ad, 8, 10, 12);
    assert!(matches!(train_text(&mut m, &ad, &[], &cfg), Err(Error::SingleClass(_))));
}

#[test]
fn full_text_head_gradient() {
    for seed in 0..2 {
        let data = flat(&corpus(2, 20 + seed));
        let batch: Vec<TextSample> = data.iter().step_by(3).take(4).cloned().collect();
        let words = training_words(&batch);
        // leave some words out of the trainable table so the fixed OOV path runs
        let kept: Vec<String> = words.iter().step_by(2).cloned().collect();
        let table = WordVectorTable::random(words.iter().map(String::as_str), 5, seed).unwrap();
        let cfg = TextModelConfig {
            cnn_filters: 3,
            cnn_out: 4,
            transcript_subwords: 24,
            ..TextModelConfig::default()
        };
        let vocab = vocab_for(&words);
        let mut ctx = EncoderConfig::new(vocab.len(), 4, cfg.segment_subwords);
        ctx.heads = 2;
        ctx.ffn = 6;
        ctx.layers = 1;
        let mut sent = EncoderConfig::new(vocab.len(), 4, cfg.transcript_subwords);
        sent.heads = 2;
        sent.ffn = 6;
        sent.layers = 1;
        let mut m = TextModel::<f64>::build(
            cfg,
            kept,
            table,
            vocab,
            Box::new(MiniEncoder::new(ctx, "ctx").unwrap()),
            Box::new(MiniEncoder::new(sent, "sent").unwrap()),
            seed,
        )
        .unwrap();
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
            Some(30),
        )
        .unwrap();
        assert!(report.arrays.iter().any(|a| a.key.starts_with("sent_")));
        assert!(report.passed(), "{:?}", report.failures());
    }
}

#[test]
fn filler_density_is_learnable() {
    // a 7-token window alone caps out near 0.90, so the transcript-level branches
    // must carry the rest; they need enough distinct transcripts not to memorize
    let c = corpus(400, 30);
    let mut subjects: Vec<&Vec<TextSample>> = c.iter().collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let (val_subj, train_subj) = subjects.split_at(80);
    let train: Vec<TextSample> = train_subj.iter().flat_map(|v| v.iter().cloned()).collect();
    let val: Vec<TextSample> = val_subj.iter().flat_map(|v| v.iter().cloned()).collect();
    let mut m = desk_model::<f32>(&train, 32, 16, 31);
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 50,
        patience: 5,
        seed: 2,
        bn_momentum: 0.9,
        ..TrainConfig::default()
    };
    train_text(&mut m, &train, &val, &cfg).unwrap();
    let refs: Vec<&TextSample> = val.iter().collect();
    let probs = m.classify_segments(&refs).unwrap();
    let correct = probs.iter().zip(&val).filter(|(p, s)| (**p >= 0.5) == s.label).count();
    let acc = correct as f64 / val.len() as f64;
    assert!(acc >= 0.95, "segment validation accuracy {acc}");
}

proptest! {
    #[test]
    fn aggregate_text_bounds(mut ps in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let a = aggregate_text(&ps).unwrap();
        let lo = ps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= a && a <= hi + 1e-12);
        ps.reverse();
        prop_assert!((aggregate_text(&ps).unwrap() - a).abs() < 1e-12);
    }
}
