//! Error type shared by all pipeline stages.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GerkError>;

#[derive(Debug, Error)]
pub enum GerkError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input data, pointing at the offending file and line.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A request referencing data that does not exist (unknown node,
    /// absent edge, test-node unlearning attempt).
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Partition capacity cannot hold all nodes (k * delta < n).
    #[error("infeasible partition: {0}")]
    Infeasible(String),

    #[error("audit failed: {}", .0.join("; "))]
    AuditFailed(Vec<String>),

    #[error("format error: {0}")]
    Format(String),
}

impl GerkError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        GerkError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        GerkError::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}
