use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported skeleton: expected {expected} joints, found {found} (line {line})")]
    UnsupportedSkeleton {
        expected: usize,
        found: usize,
        line: usize,
    },

    #[error("sample contains no tracked body in any frame")]
    EmptySample,

    #[error("invalid skeleton sequence: {0}")]
    InvalidSequence(String),

    #[error("preprocess: {0}")]
    Preprocess(String),

    #[error("config: {0}")]
    Config(String),

    #[error("perturbation target {joint} out of range for {joints} joints")]
    Target { joint: usize, joints: usize },

    #[error("model: {0}")]
    Model(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("attribution: {0}")]
    Attr(String),

    #[error("k = {k} out of range 0..={max}")]
    Range { k: usize, max: usize },

    #[error("metric: {0}")]
    Metric(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
