use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A shape does not fit inside the canvas.
    #[error("shape out of bounds: {0}")]
    Bounds(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Records disagree with the declared dump layout.
    #[error("schema error: {0}")]
    Schema(String),
    #[error("corrupt index {path}: {reason}")]
    CorruptIndex { path: PathBuf, reason: String },
    #[error("truncated blob {path}: expected {expected} bytes, found {found}")]
    TruncatedBlob {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("non-finite value in {stream} for sample {sample_id} at layer {layer}")]
    NonFinite {
        stream: String,
        sample_id: String,
        layer: usize,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
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

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
