use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum QgError {
    /// Tensor shape mismatch; carries a human-readable shape diff.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A completed operation produced NaN or Inf.
    #[error("non-finite value produced by {op} (index {index}, value {value})")]
    NonFinite {
        op: &'static str,
        index: usize,
        value: f64,
    },

    /// Invalid configuration or argument.
    #[error("invalid config: {0}")]
    Config(String),

    /// A precondition of an operation was violated.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, QgError>;

impl QgError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        QgError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        QgError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        QgError::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
