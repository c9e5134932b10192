use thiserror::Error;

/// Errors surfaced by tensor construction, graph ops, data generation and file IO.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("non-deterministic computation: {0}")]
    NonDeterministic(String),

    #[error("numerical failure in {term}: {detail}")]
    Numerical { term: String, detail: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;
