use std::path::PathBuf;

use crate::model::TargetId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown target id {0}")]
    UnknownTarget(TargetId),

    #[error("duplicate target id {0}")]
    DuplicateTarget(TargetId),

    #[error("distance table is not a metric: {0}")]
    NonMetric(String),

    #[error("instance too large for exhaustive search: {nodes} nodes (limit {limit})")]
    TooManyNodes { nodes: usize, limit: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("trajectory solver did not converge: {0}")]
    SolverFailed(Box<crate::trajectory::SolveDiagnostics>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
