//! Crate-wide error type and exit-code mapping for the CLI.

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The exact propagator only covers the underdamped oscillator.
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    /// Configuration validation collects every problem before failing.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("fit failed after {iterations} iterations: {reason}")]
    FitFailure {
        reason: String,
        iterations: usize,
        /// Last parameter iterate, for diagnostics.
        last_params: Vec<f64>,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// CLI exit code: 0 success, 2 validation error, 3 fit failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::UnsupportedRegime(_) | Error::Config(_) => 2,
            Error::FitFailure { .. } => 3,
            Error::Parse { .. } | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
