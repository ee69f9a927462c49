use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A class has no instances where at least one is required.
    #[error("class {0} has no instances")]
    EmptyClass(u32),

    /// Plain Sinkhorn scaling left the representable range.
    #[error("numerical instability in {0}; use log-domain mode (SinkhornMode::LogDomain or Auto)")]
    NumericalInstability(&'static str),

    /// A non-finite value showed up in parameters, gradients or loss.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Model state is missing something an operation needs.
    #[error("state error: {0}")]
    State(String),

    /// A prediction mode selects no candidate classes.
    #[error("no embeddings available for prediction mode {0}")]
    EmptyMode(&'static str),

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Unparseable input line.
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    /// Input parsed but violates the file schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Unseen-class data leaked into training.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
