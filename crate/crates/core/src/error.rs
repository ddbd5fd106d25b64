use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("cluster has no nodes")]
    EmptyCluster,

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    /// Resulting placement would exceed capacity on the listed nodes.
    #[error("placement infeasible on node(s): {}", .nodes.join(", "))]
    Infeasible { nodes: Vec<String> },

    #[error("insufficient data for stream {um} -> {dm}: {reason}")]
    InsufficientData { um: String, dm: String, reason: String },

    #[error("no IP address for node `{0}`")]
    MissingIp(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error on {}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn unknown(kind: &'static str, name: impl Into<String>) -> Self {
        Error::Unknown {
            kind,
            name: name.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
