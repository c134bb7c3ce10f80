use std::path::Path;
use std::process::Command;

use adscreen::pipeline::config::KEYS;
use adscreen::pipeline::synth::AGE_BIN_COUNTS;
use adscreen::pipeline::{assert_disjoint, ingest_manifest, load_corpus, synth_corpus, RunConfig};
use adscreen::eval::age_bin;
use adscreen::Error;

const HEADER: &str = "subject_id,label,age,gender,audio_path,transcript_path,asr_transcript_path,source-notes\n";

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adscreen"))
}

/// Every file under `dir`, relative path and bytes, sorted.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn manifest_validation() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.txt", "The boy uh fell.");
    let ok = format!(
        "{HEADER}s1,AD,70,female,,a.txt,,\ns2,HC,65,male,,a.txt,,note\ns3,HC,80,female,missing.wav,,,\n"
    );
    let m = ingest_manifest(&write(dir.path(), "m.csv", &ok)).unwrap();
    assert_eq!(m.records.len(), 3);
    assert_eq!(m.records[1].notes, "note");
    assert_eq!(m.diagnostics.len(), 1);
    assert!(m.diagnostics[0].contains("missing.wav"));

    let dup = format!("{HEADER}s1,AD,70,female,,a.txt,,\ns1,HC,65,male,,a.txt,,\n");
    let err = ingest_manifest(&write(dir.path(), "d.csv", &dup)).unwrap_err().to_string();
    assert!(err.contains("duplicate subject_id \"s1\""), "{err}");

    let mci = format!("{HEADER}s1,MCI,70,female,,a.txt,,\ns2,HC,0,male,,a.txt,,\ns3,HC,60,male,,,,\n");
    let err = ingest_manifest(&write(dir.path(), "l.csv", &mci)).unwrap_err().to_string();
    assert!(err.contains("\"MCI\""), "{err}");
    assert!(err.contains("row 3"), "{err}");
    assert!(err.contains("neither audio_path nor transcript_path"), "{err}");
}

#[test]
fn config_files_includes_and_env() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "base.conf", "lr = 1e-3\nbatch = 8 # comment\n");
    let main = write(dir.path(), "run.conf", "include base.conf\nbatch = 16\nsegment = long\n");
    let c = RunConfig::resolve(Some(&main)).unwrap();
    assert_eq!(c.float("lr").unwrap(), 1e-3);
    assert_eq!(c.usize("batch").unwrap(), 16);
    assert_eq!(c.segment().unwrap().frames(), 496);

    let bad = write(dir.path(), "bad.conf", "learning_rate = 1\n");
    let err = RunConfig::resolve(Some(&bad)).unwrap_err().to_string();
    assert!(err.contains("unknown key \"learning_rate\""), "{err}");
    let bad = write(dir.path(), "bad2.conf", "segment = medium\n");
    assert!(RunConfig::resolve(Some(&bad)).is_err());

    let mut c = RunConfig::default();
    c.apply_env([("ADSCREEN_PATIENCE".to_string(), "4".to_string()), ("HOME".into(), "/x".into())])
        .unwrap();
    assert_eq!(c.usize("patience").unwrap(), 4);
    assert!(c.apply_env([("ADSCREEN_NOPE".to_string(), "1".to_string())]).is_err());
    assert!(c.set("weights", "1,-2").is_err());
    assert_eq!(c.weights().unwrap(), [0.0, 1.0, 1.5, 2.0, 1e14]);
}

#[test]
fn every_key_has_a_documented_default() {
    let c = RunConfig::default();
    for (k, default, doc) in KEYS {
        assert_eq!(c.get(k), *default);
        assert!(!doc.is_empty(), "{k}");
    }
    assert_eq!(c.float("lr").unwrap(), 1e-6);
    assert_eq!(c.usize("batch").unwrap(), 32);
    assert_eq!(c.usize("patience").unwrap(), 30);
    let mut d = c.clone();
    d.set("seed", "3").unwrap();
    assert_ne!(c.hash(), d.hash());
    assert_eq!(c.hash(), RunConfig::default().hash());
}

#[test]
fn synthetic_corpus_contract() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = synth_corpus(40, 7, a.path()).unwrap();
    synth_corpus(40, 7, b.path()).unwrap();
    assert_eq!(m.records.len(), 40);
    let ad = m.records.iter().filter(|r| r.label.is_ad()).count();
    assert!(ad.abs_diff(20) <= 1);
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
    assert!(m.diagnostics.is_empty());
    assert!(synth_corpus(3, 7, a.path()).is_err());

    let odd = tempfile::tempdir().unwrap();
    let m = synth_corpus(5, 1, odd.path()).unwrap();
    let ad = m.records.iter().filter(|r| r.label.is_ad()).count();
    assert!(ad == 2 || ad == 3);

    // every synthetic subject yields audio patches and transcript tokens
    let cfg = RunConfig::default();
    let corpus = load_corpus(&ingest_manifest(&a.path().join("manifest.csv")).unwrap(), &cfg, None).unwrap();
    for s in &corpus.subjects {
        assert!(s.patches(96).unwrap().len() >= 4, "{}", s.id());
        assert!(s.tokens.as_ref().unwrap().len() >= 7);
    }
    assert!(matches!(assert_disjoint(&corpus, &[0, 1, 2], &[2, 3]), Err(Error::InvalidArgument(_))));
    assert!(assert_disjoint(&corpus, &[0, 1], &[2, 3]).is_ok());
}

#[test]
fn synthetic_ages_follow_reference_bins() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_corpus(200, 3, dir.path()).unwrap();
    let total: usize = AGE_BIN_COUNTS.iter().sum();
    let mut counts = [0usize; 5];
    for r in &m.records {
        counts[age_bin(r.age).unwrap()] += 1;
    }
    for (c, reference) in counts.iter().zip(AGE_BIN_COUNTS) {
        let got = *c as f64 / 200.0;
        let want = reference as f64 / total as f64;
        assert!((got - want).abs() <= 0.1, "{counts:?}");
    }
}

#[test]
fn cli_fuse_predict_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    let st = bin().args(["synth", "--n", "20", "--seed", "2", "--out"]).arg(&corpus).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let conf = write(
        root,
        "desk.conf",
        "lr = 1e-3\nmax_epochs = 2\npatience = 2\nbatch = 16\naudio_width_div = 16\nencoder_dim = 8\nword_dim = 8\nbootstrap = 50\nbn_momentum = 0.9\n",
    );
    let manifest = corpus.join("manifest.csv");
    let run = |args: &[&str], out: &Path| {
        let o = bin()
            .arg("--config")
            .arg(&conf)
            .arg("--manifest")
            .arg(&manifest)
            .arg("--out")
            .arg(out)
            .args(["--jobs", "1"])
            .args(args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };

    let model = root.join("model").display().to_string();
    let set_model = format!("model_dir={model}");
    run(&["train-audio", "--set", &set_model], &root.join("a"));
    run(&["train-text", "--set", &set_model], &root.join("a"));
    assert!(root.join("model/audio.weights.meta.json").exists());
    run(&["predict", "--set", &set_model], &root.join("p1"));
    run(&["predict", "--set", &set_model], &root.join("p2"));
    let p1 = std::fs::read(root.join("p1/predictions.csv")).unwrap();
    assert_eq!(p1, std::fs::read(root.join("p2/predictions.csv")).unwrap());
    assert!(root.join("p1/highlights/S001.txt").exists());

    let table = run(&["fuse", "--weights", "0,1,1.5,2,1e14"], &root.join("p1"));
    assert_eq!(table.lines().count(), 6, "{table}");
    assert!(table.lines().nth(5).unwrap().trim_start().starts_with("1e14"));

    run(&["evaluate", "--seed", "5"], &root.join("e"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 10);
    assert!(std::fs::read_to_string(root.join("e/roc.csv")).unwrap().starts_with("fold,fpr,tpr,threshold"));
    let side: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("e/report.json.meta.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 5);
    assert_eq!(side["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn cli_reports_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["predict", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"manifest\""));
    let o = bin().args(["fuse", "--set", "nonsense=1"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
