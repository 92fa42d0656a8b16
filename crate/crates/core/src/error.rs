use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A persisted file did not match its schema. `record` names the
    /// offending entry (an author id, a line number) when one is known.
    #[error("format error in {record}: {detail}")]
    Format { record: String, detail: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("report input is empty: {0}")]
    EmptyReport(String),

    #[error("refusing to aggregate runs over different forget sets: {0:?}")]
    MixedForgetSets(Vec<String>),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AuditError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AuditError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }
}
