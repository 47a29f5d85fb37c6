//! Error types shared across the crate.

use std::path::PathBuf;

use crate::pipeline::Modality;
use crate::trainer::Stream;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two arrays that must agree in size do not.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A feature file did not start with the expected magic bytes.
    #[error("{path}: not a feature file (bad magic)")]
    BadMagic { path: PathBuf },

    /// A feature file carries a version this build does not understand.
    #[error("{path}: unsupported feature file version {got}")]
    BadVersion { path: PathBuf, got: u32 },

    /// A feature file's declared or actual shape disagrees with expectations.
    #[error("{path}: shape mismatch: {detail}")]
    ShapeMismatch { path: PathBuf, detail: String },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("no {0:?} features available: missing from manifest")]
    MissingModality(Modality),

    /// A fusion weight references a stream with no score vector.
    #[error("missing scores for stream {0:?}")]
    MissingStream(Stream),

    #[error("dataset is empty")]
    EmptyDataset,

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: u64, detail: String },

    /// The finite-difference oracle could not evaluate its target.
    #[error("gradient oracle failure: {0}")]
    OracleFailure(String),

    #[error("bad configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
