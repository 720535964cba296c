use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backends::GsiKind;
use crate::domain::{GraspType, Millis, Phase};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),

    #[error("unknown object id {0}")]
    UnknownObject(u32),

    #[error("timestamp {t} ms is not after the previous sample at {last} ms")]
    NonMonotonic { t: Millis, last: Millis },

    #[error("{0} has no pattern-recognition pattern")]
    UnsupportedGrasp(GraspType),

    #[error("{input} input is not accepted by a {kind} session")]
    InputMismatch { kind: GsiKind, input: &'static str },

    #[error("session is already in the {0:?} phase")]
    DuplicatePhase(Phase),

    #[error("all slots of the sequence set have been presented")]
    SequenceExhausted,

    #[error("sequence constraints are unsatisfiable: {0}")]
    Infeasible(String),

    #[error("gave up after {0} attempts")]
    AttemptsExceeded(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
