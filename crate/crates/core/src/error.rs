use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TaenError> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum TaenError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes at offset 0: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("malformed header at byte offset {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("truncated payload: expected {expected} bytes, found {found} (payload ends inside row {row})")]
    Truncated {
        expected: usize,
        found: usize,
        row: usize,
    },
    #[error("{trailing} trailing bytes after payload at byte offset {offset}")]
    TrailingBytes { offset: usize, trailing: usize },
    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("feature file for video {video_id} not found: {path}")]
    MissingFeatures { video_id: String, path: PathBuf },
    #[error("inconsistent feature dimension: {first_id} has d_feat={first_dim}, {other_id} has d_feat={other_dim}")]
    InconsistentDim {
        first_id: String,
        first_dim: usize,
        other_id: String,
        other_dim: usize,
    },
    #[error("unknown label {label:?} for video {video_id}")]
    UnknownLabel { video_id: String, label: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("zero-norm embedding row {row}")]
    ZeroNorm { row: usize },
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("insufficient data for episode: {0}")]
    InsufficientData(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TaenError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TaenError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use TaenError::*;
        match self {
            Config(_) | InvalidArgument(_) | Json(_) => ErrorKind::Config,
            Numeric(_) | ZeroNorm { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
