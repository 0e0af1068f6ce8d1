use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operation requires a {expected} camera, got {got}")]
    UnsupportedModel {
        expected: &'static str,
        got: &'static str,
    },

    #[error("{what} did not converge (last residual {residual:e})")]
    Numerical { what: &'static str, residual: f64 },

    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no valid overlap between prediction and reference")]
    EmptyOverlap,

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("box corner behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
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
