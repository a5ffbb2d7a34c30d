//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A tensor, trace, selection, or config failed an internal invariant.
    #[error("validation: {0}")]
    Validation(String),

    /// Dimensions disagree between two objects that must be conformant.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A benchmark manifest line could not be parsed or failed validation.
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    /// A trace provider (built-in or plugin) reported a failure.
    #[error("adapter: {0}")]
    Adapter(String),

    /// Input data is structurally fine but unusable (empty manifest, no
    /// hallucinated token, undefined metric where one is required, ...).
    #[error("data: {0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
