use std::io;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// [`Error::category`] groups them for process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frequency {frequency_hz} Hz aliases at slow-time rate {rate_hz} Hz (Nyquist {nyquist_hz} Hz)")]
    Aliasing {
        frequency_hz: f64,
        rate_hz: f64,
        nyquist_hz: f64,
    },

    #[error("signal has zero power; SNR is undefined")]
    ZeroPower,

    #[error("no detectable target: echo cube is all zeros")]
    NoTarget,

    #[error("phase series must be unwrapped first")]
    WrappedInput,

    #[error("phase series is already unwrapped")]
    UnwrappedInput,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty spectrum: {0}")]
    EmptySpectrum(String),

    #[error("loss must be a scalar, got length {0}")]
    NonScalarLoss(usize),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("training diverged at iteration {iteration}: non-finite loss")]
    Diverged { iteration: usize },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Invariant,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Aliasing { .. } | Error::Json(_) => ErrorCategory::Config,
            Error::Invariant(_) | Error::Diverged { .. } | Error::DuplicateParameter(_) => {
                ErrorCategory::Invariant
            }
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
