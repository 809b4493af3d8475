use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("class `{class}` is not part of dataset `{dataset}`")]
    UnknownClass { dataset: String, class: String },

    #[error("requested {requested} samples of class `{class}` but only {available} are available")]
    InsufficientSamples { class: String, requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("overlap kind `{declared}` does not match the class sets (shared: {shared}, private: {private})")]
    OverlapMismatch { declared: String, shared: usize, private: usize },

    #[error("image shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("{kind} version {found} is not supported (expected {expected})")]
    VersionMismatch { kind: &'static str, found: u32, expected: u32 },

    #[error("corrupt manifest {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },

    #[error("checkpoint does not match the requested architecture: {0}")]
    CheckpointMismatch(String),

    #[error("input hash mismatch for {what}: expected {expected}, found {found}")]
    HashMismatch { what: String, expected: String, found: String },

    #[error("non-finite value in {location}: {detail}")]
    NumericalFault { location: String, detail: String },

    #[error("training diverged at iteration {iteration}: loss {loss} exceeded 10x the initial loss {initial} for {window} consecutive iterations")]
    Diverged { iteration: usize, loss: f64, initial: f64, window: usize },

    #[error("class `{0}` has no labeled samples")]
    EmptyClass(String),

    #[error("prototype for class {0} has zero norm")]
    DegeneratePrototype(usize),

    #[error("need at least {needed} affinity records, got {found}")]
    TooFewRecords { needed: usize, found: usize },

    #[error("cannot combine runs from different scenarios in one table: {0} vs {1}")]
    IncompatibleRuns(String, String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, #[source] source: Box<Error> },

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, #[source] source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptManifest { path: path.into(), reason: reason.into() }
    }
}
