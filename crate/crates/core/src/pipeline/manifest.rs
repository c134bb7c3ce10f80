//! Subject manifest CSV.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subject::{Gender, Label};
use crate::text::TranscriptSource;

pub const HEADER: [&str; 8] = [
    "subject_id",
    "label",
    "age",
    "gender",
    "audio_path",
    "transcript_path",
    "asr_transcript_path",
    "source-notes",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: Label,
    pub age: u32,
    pub gender: Gender,
    pub audio_path: Option<PathBuf>,
    pub transcript_path: Option<PathBuf>,
    pub asr_transcript_path: Option<PathBuf>,
    pub notes: String,
}

impl SubjectRecord {
    pub fn transcript(&self, source: TranscriptSource) -> Option<&Path> {
        match source {
            TranscriptSource::Manual => self.transcript_path.as_deref(),
            TranscriptSource::Asr => self.asr_transcript_path.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<SubjectRecord>,
    /// Per-row notes about referenced files that do not exist.
    pub diagnostics: Vec<String>,
}

impl Manifest {
    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label.is_ad()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(HEADER)?;
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.subject_id.clone(),
                r.label.to_string(),
                r.age.to_string(),
                r.gender.to_string(),
                p(&r.audio_path),
                p(&r.transcript_path),
                p(&r.asr_transcript_path),
                r.notes.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest. Relative paths resolve against the
/// manifest's directory. Every invalid row is reported in one error.
pub fn ingest_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = Vec::new();
    for name in &HEADER[..7] {
        idx.push(col(name).ok_or_else(|| Error::Manifest(format!("missing column {name:?}")))?);
    }
    let notes_col = col(HEADER[7]);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |s: &str| -> Option<PathBuf> {
        let s = s.trim();
        if s.is_empty() {
            return None;
        }
        let p = PathBuf::from(s);
        Some(if p.is_absolute() { p } else { base.join(p) })
    };

    let mut m = Manifest::default();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |c: usize| row.get(idx[c]).unwrap_or("").trim();
        let id = field(0).to_string();
        let mut bad = |msg: String| problems.push(format!("row {line} ({id}): {msg}"));
        if id.is_empty() {
            bad("empty subject_id".into());
            continue;
        }
        if !seen.insert(id.clone()) {
            bad(format!("duplicate subject_id {id:?}"));
            continue;
        }
        let label = match field(1).parse::<Label>() {
            Ok(l) => l,
            Err(_) => {
                bad(format!("label {:?} is not AD or HC", field(1)));
                continue;
            }
        };
        let age = match field(2).parse::<u32>() {
            Ok(a) if a > 0 => a,
            _ => {
                bad(format!("age {:?} is not a positive integer", field(2)));
                continue;
            }
        };
        let gender = match field(3).parse::<Gender>() {
            Ok(g) => g,
            Err(_) => {
                bad(format!("gender {:?} is not female or male", field(3)));
                continue;
            }
        };
        let (audio, tr, asr) = (resolve(field(4)), resolve(field(5)), resolve(field(6)));
        if audio.is_none() && tr.is_none() {
            bad("neither audio_path nor transcript_path is set".into());
            continue;
        }
        for p in [&audio, &tr, &asr].into_iter().flatten() {
            if !p.exists() {
                m.diagnostics.push(format!("row {line} ({id}): missing file {}", p.display()));
            }
        }
        m.records.push(SubjectRecord {
            subject_id: id,
            label,
            age,
            gender,
            audio_path: audio,
            transcript_path: tr,
            asr_transcript_path: asr,
            notes: notes_col.and_then(|c| row.get(c)).unwrap_or("").to_string(),
        });
    }
    if !problems.is_empty() {
        return Err(Error::Manifest(problems.join("; ")));
    }
    for d in &m.diagnostics {
        log::warn!("{d}");
    }
    Ok(m)
}
