use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("checksum mismatch for {file}: manifest {expected:08x}, file {found:08x}")]
    ChecksumMismatch { file: String, expected: u32, found: u32 },
    #[error("version mismatch: {0}")]
    VersionMismatch(String),
    #[error("variant mismatch: checkpoint holds {found}, expected {expected}")]
    VariantMismatch { expected: String, found: String },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("shape mismatch for tensor {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("checkpoint tensor set differs: {0}")]
    TensorSet(String),
    #[error("invalid csv in {path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] somspike_core::Error),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            IoError::MissingFile(path)
        } else {
            IoError::Io { path, source }
        }
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;
