use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training data must contain both classes (found only {0})")]
    SingleClass(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("weight container: {0}")]
    Container(String),

    #[error("strict load rejected arrays: {}", .0.join(", "))]
    StrictLoad(Vec<String>),

    #[error("wav: {0}")]
    Wav(String),

    #[error("missing embedding for key {0}")]
    MissingEmbedding(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
