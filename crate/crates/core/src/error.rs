use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("shape mismatch at node {node}: {msg}")]
    Shape { node: usize, msg: String },

    #[error("numerical blow-up at node {node}")]
    NumericalBlowUp { node: usize },

    #[error("non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("{0}")]
    Numerical(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: checksum {found} does not match recorded {expected}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("missing artifact: expected {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalBlowUp { .. } | Error::Divergence { .. } | Error::Numerical(_)
        )
    }
}
