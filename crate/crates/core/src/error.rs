//! Error type shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A schema failed validation (duplicate attributes, inconsistent join setup, ...).
    InvalidSchema(String),
    /// A configuration value is out of range or inconsistent.
    InvalidConfig(String),
    /// A (query, rewrite-option) pair has no entry in the plan-time table.
    MissingEntry { query_id: u64, ro_index: usize },
    /// A vector had the wrong length for the operation.
    ShapeMismatch { expected: usize, got: usize },
    /// An action was taken on a rewrite option already explored this episode.
    AlreadyExplored(usize),
    /// Action selection was asked to pick from an empty remaining set.
    EmptyActionSet,
    /// A required artifact (checkpoint, classifier, ...) was not provided.
    MissingArtifact(String),
    /// A checkpoint file could not be decoded; `offset` is the byte position.
    Checkpoint { offset: usize, msg: String },
    /// A checkpoint was written by an incompatible format version.
    CheckpointVersion { found: u32, expected: u32 },
    /// Training produced a non-finite loss and was aborted.
    NonFiniteLoss,
    /// A data file could not be parsed.
    Parse { line: usize, msg: String },
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidSchema(msg) => write!(f, "invalid schema: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::MissingEntry { query_id, ro_index } => {
                write!(f, "no plan-time entry for query {query_id}, rewrite option {ro_index}")
            }
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected length {expected}, got {got}")
            }
            Error::AlreadyExplored(i) => write!(f, "rewrite option {i} was already explored"),
            Error::EmptyActionSet => write!(f, "no unexplored rewrite options remain"),
            Error::MissingArtifact(name) => write!(f, "missing artifact: {name}"),
            Error::Checkpoint { offset, msg } => {
                write!(f, "corrupt checkpoint at byte {offset}: {msg}")
            }
            Error::CheckpointVersion { found, expected } => {
                write!(f, "checkpoint format version {found} (this build reads version {expected})")
            }
            Error::NonFiniteLoss => write!(f, "training loss became non-finite"),
            Error::Parse { line, msg } => write!(f, "parse error on line {line}: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
