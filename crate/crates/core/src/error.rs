use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric (asymmetry {asymmetry:e} exceeds {tolerance:e})")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("singular or rank-deficient matrix: {0}")]
    Singular(String),

    #[error("eigen-decomposition did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("spectral bound violated: {0}")]
    Bounds(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("system is uncontrollable: {0}")]
    Uncontrollable(String),

    #[error("matrix is not Hurwitz: {0}")]
    NotHurwitz(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("integration produced a non-finite state at t = {time}")]
    Diverged { time: f64 },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
