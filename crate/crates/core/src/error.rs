use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation (e.g. `t ∉ [0,1]`).
    #[error("domain error: {0}")]
    Domain(String),
    /// Input data failed validation (non-normalized probabilities, bad shapes).
    #[error("validation error: {0}")]
    Validation(String),
    /// A state that cannot arise under a correct forward process.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// A non-finite value appeared during a numerical computation.
    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        /// Position or parameter index where the failure was first seen.
        index: Option<usize>,
    },
    /// Enumeration would exceed the state-space guard.
    #[error("state space too large: {0}")]
    StateSpace(String),
    /// Artifacts (checkpoint, config, records) disagree with each other.
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, index: Option<usize>) -> Self {
        Error::Numerical {
            message: message.into(),
            index,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
