use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit-code classes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration or argument value (exit code 1).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Tensor shape violation (exit code 1).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Filesystem failure (exit code 2).
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents: bad magic, wrong version, nonconforming
    /// pixel values (exit code 2).
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    /// NaN/Inf escaped a computation that promises finite results (exit code 3).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::ShapeMismatch(_) => 1,
            Error::Io { .. } | Error::Format { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
