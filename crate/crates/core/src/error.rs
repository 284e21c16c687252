use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {needed}")]
    InputTooShort { len: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate source: {0}")]
    DegenerateSource(String),

    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    #[error("split violation: {0}")]
    SplitViolation(String),

    #[error("mask contract violation: {0}")]
    ContractViolation(String),

    #[error("unsupported source count {0} (exhaustive permutation search supports 2..=6)")]
    UnsupportedSourceCount(usize),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("numeric guard tripped: {0}")]
    NumericGuardTripped(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("stage order violation: {0}")]
    StageOrderViolation(String),

    #[error("unsupported stage: {0}")]
    UnsupportedStage(String),

    #[error("manifest error: {0}")]
    ManifestError(String),

    #[error("sample rate {found} Hz does not match configured {expected} Hz")]
    SampleRate { expected: u32, found: u32 },

    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("io error in {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
