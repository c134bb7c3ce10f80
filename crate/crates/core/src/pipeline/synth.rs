//! Deterministic synthetic corpus standing in for the access-restricted one.
//!
//! Audio is a voiced-syllable signal (harmonic tones under syllable
//! envelopes). AD clips add band-limited noise bursts and longer pauses.
//! Transcripts describe a kitchen picture; AD transcripts carry more filler
//! words, vague nouns and broken repetitions.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{ingest_manifest, Manifest, SubjectRecord};
use crate::audio::{write_wav, AudioClip, ANALYSIS_RATE};
use crate::error::{Error, Result};
use crate::subject::{Gender, Label};

/// Subjects per age bin in the reference corpus (46-55 .. 86-95).
pub const AGE_BIN_COUNTS: [usize; 5] = [32, 154, 193, 88, 10];

const CLAUSES: &[&str] = &[
    "the boy is standing on the stool",
    "he is reaching for the cookie jar",
    "the stool is tipping over",
    "the girl is asking for a cookie",
    "the mother is washing the dishes",
    "the water is running over the sink",
    "she is drying a plate",
    "the curtains are open",
    "there is a window behind her",
    "the water is on the floor",
    "the boy is going to fall",
    "the girl has her finger to her mouth",
    "there are cups on the counter",
    "the mother does not notice the water",
    "it is a kitchen",
];
const FILLERS: &[&str] = &["uh", "um", "er", "hm", "mhm", "well"];
const VAGUE: &[&str] = &["thing", "stuff", "something", "that one"];

/// Allocates `n` subjects to the age bins by largest remainder.
fn age_bin_quota(n: usize) -> Vec<usize> {
    let total: usize = AGE_BIN_COUNTS.iter().sum();
    let exact: Vec<f64> = AGE_BIN_COUNTS.iter().map(|&c| c as f64 * n as f64 / total as f64).collect();
    let mut q: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let short = n - q.iter().sum::<usize>();
    for &b in order.iter().take(short) {
        q[b] += 1;
    }
    q
}

/// Manual transcript text for one subject.
pub fn synth_transcript(ad: bool, rng: &mut ChaCha8Rng) -> String {
    let filler_rate = if ad { 0.3 } else { 0.04 };
    let repeat_rate = if ad { 0.12 } else { 0.01 };
    let vague_rate = if ad { 0.1 } else { 0.0 };
    let n_clauses = rng.gen_range(6..10);
    let mut sentences = Vec::with_capacity(n_clauses);
    for _ in 0..n_clauses {
        let clause = CLAUSES.choose(rng).unwrap();
        let mut words: Vec<String> = Vec::new();
        for w in clause.split(' ') {
            if rng.gen_bool(filler_rate) {
                words.push(FILLERS.choose(rng).unwrap().to_string());
            }
            if rng.gen_bool(vague_rate) && w.len() > 3 {
                words.push(VAGUE.choose(rng).unwrap().to_string());
                continue;
            }
            words.push(w.to_string());
            if rng.gen_bool(repeat_rate) {
                words.push(w.to_string());
            }
        }
        let mut s = words.join(" ");
        if let Some(c) = s.get(0..1) {
            s = c.to_uppercase() + &s[1..];
        }
        s.push(if rng.gen_bool(0.1) { '?' } else { '.' });
        sentences.push(s);
    }
    sentences.join(" ")
}

/// Speech-recognizer style rendering: lower case, no punctuation, some
/// fillers dropped.
pub fn asr_version(manual: &str, rng: &mut ChaCha8Rng) -> String {
    manual
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty() && !(FILLERS.contains(&w.as_str()) && rng.gen_bool(0.3)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Voiced syllables with pauses; AD adds noise bursts in 2.5-4.5 kHz and
/// longer silences.
pub fn synth_audio(ad: bool, secs: f64, rng: &mut ChaCha8Rng) -> AudioClip {
    let sr = ANALYSIS_RATE as f64;
    let n = (secs * sr) as usize;
    let mut x = vec![0.0f64; n];
    let f0 = rng.gen_range(100.0..220.0);
    let mut t = rng.gen_range(0.0..0.2);
    while t < secs {
        let dur = rng.gen_range(0.15..0.3);
        let pitch = f0 * rng.gen_range(0.9..1.1);
        let (a, b) = ((t * sr) as usize, (((t + dur) * sr) as usize).min(n));
        for (i, s) in x[a..b].iter_mut().enumerate() {
            let u = i as f64 / (b - a).max(1) as f64;
            let env = (PI * u).sin().powi(2);
            let tt = (a + i) as f64 / sr;
            let mut v = 0.0;
            for h in 1..=5 {
                v += (2.0 * PI * pitch * h as f64 * tt).sin() / h as f64;
            }
            *s += 0.25 * env * v;
        }
        let pause = if ad && rng.gen_bool(0.35) {
            rng.gen_range(0.5..1.2)
        } else {
            rng.gen_range(0.05..0.15)
        };
        t += dur + pause;
    }
    if ad {
        let mut t = rng.gen_range(0.0..0.4);
        while t < secs {
            let dur = rng.gen_range(0.1..0.25);
            let (a, b) = ((t * sr) as usize, (((t + dur) * sr) as usize).min(n));
            let partials: Vec<(f64, f64)> = (0..40)
                .map(|_| (rng.gen_range(2500.0..4500.0), rng.gen_range(0.0..2.0 * PI)))
                .collect();
            for (i, s) in x[a..b].iter_mut().enumerate() {
                let tt = (a + i) as f64 / sr;
                let v: f64 = partials.iter().map(|(f, ph)| (2.0 * PI * f * tt + ph).sin()).sum();
                *s += 0.02 * v;
            }
            t += dur + rng.gen_range(0.3..0.9);
        }
    }
    for s in x.iter_mut() {
        *s += rng.gen_range(-0.003..0.003);
    }
    let samples = x.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
    AudioClip::new(samples, ANALYSIS_RATE).expect("non-empty clip")
}

/// Writes `manifest.csv`, `audio/*.wav`, `transcripts/*.txt` and
/// `asr/*.txt` under `out_dir` and returns the ingested manifest.
pub fn synth_corpus(n_subjects: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if n_subjects < 4 {
        return Err(Error::InvalidArgument(format!("synthetic corpus needs at least 4 subjects, got {n_subjects}")));
    }
    for sub in ["audio", "transcripts", "asr"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = (0..n_subjects).map(|i| i % 2 == 0).collect();
    labels.shuffle(&mut rng);
    let mut bins: Vec<usize> = age_bin_quota(n_subjects)
        .iter()
        .enumerate()
        .flat_map(|(b, &c)| std::iter::repeat(b).take(c))
        .collect();
    bins.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n_subjects);
    for i in 0..n_subjects {
        let id = format!("S{:03}", i + 1);
        let ad = labels[i];
        let mut srng = ChaCha8Rng::seed_from_u64(seed);
        srng.set_stream(i as u64 + 1);
        let lo = 46 + 10 * bins[i] as u32;
        let age = srng.gen_range(lo..=lo + 9);
        let gender = if srng.gen_bool(0.6) { Gender::Female } else { Gender::Male };
        let secs = srng.gen_range(4.0..6.0);
        let clip = synth_audio(ad, secs, &mut srng);
        let manual = synth_transcript(ad, &mut srng);
        let asr = asr_version(&manual, &mut srng);

        let audio_rel = format!("audio/{id}.wav");
        let tr_rel = format!("transcripts/{id}.txt");
        let asr_rel = format!("asr/{id}.txt");
        write_wav(&out_dir.join(&audio_rel), &clip)?;
        for (rel, text) in [(&tr_rel, &manual), (&asr_rel, &asr)] {
            let p = out_dir.join(rel);
            std::fs::write(&p, format!("{text}\n")).map_err(|e| Error::io(&p, e))?;
        }
        records.push(SubjectRecord {
            subject_id: id,
            label: Label::from(ad),
            age,
            gender,
            audio_path: Some(audio_rel.into()),
            transcript_path: Some(tr_rel.into()),
            asr_transcript_path: Some(asr_rel.into()),
            notes: "synthetic".into(),
        });
    }
    let path = out_dir.join("manifest.csv");
    Manifest {
        records,
        diagnostics: Vec::new(),
    }
    .save(&path)?;
    ingest_manifest(&path)
}
