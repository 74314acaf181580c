use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;
use crate::memory::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("risk level {0} is outside 0..=3")]
    OutOfRange(i64),

    #[error("symptom `{0}` is not in the loaded ontology")]
    UnknownSymptom(String),

    #[error("template `{template}` references unknown slot `{slot}`")]
    UnknownSlot { template: String, slot: String },

    #[error("template `{template}` requires slot `{slot}` but it was not bound")]
    MissingSlot { template: String, slot: String },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("memory content must not be empty")]
    EmptyContent,

    #[error("no memory nodes in the requested layers")]
    EmptyPool,

    #[error("unknown memory node {0}")]
    UnknownNode(NodeId),

    #[error("corrupt memory snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("could not parse {what} response: {detail}")]
    ParseFailure { what: &'static str, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },

    #[error("no ground truth for case `{0}`")]
    MissingTruth(String),

    #[error("session for case `{0}` has no diagnosis attempts")]
    NoAttempts(String),

    #[error("unknown case `{0}`")]
    UnknownCase(String),

    #[error("transcript too short: need at least {needed} utterances, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("nothing to report")]
    EmptyReport,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            path: path.into(),
            message: message.into(),
        }
    }
}
