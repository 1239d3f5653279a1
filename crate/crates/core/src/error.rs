use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator does not commute with parity: commutator norm {commutator:.3e} exceeds {tolerance:.3e}")]
    SymmetryViolation { commutator: f64, tolerance: f64 },

    #[error("input is not Hermitian: {0}")]
    NonHermitian(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("no linear ramp detected: {0}")]
    NoRamp(String),

    #[error("no Thouless time: fractional error never stays below {threshold}")]
    NoThoulessTime { threshold: f64 },

    #[error("fit failed after {iterations} iterations (residual {residual:.3e})")]
    FitFailure { iterations: usize, residual: f64 },

    #[error("finite-difference step too coarse: {0}")]
    Resolution(String),

    #[error("scan range error: {0}")]
    ScanRange(String),

    #[error("linear algebra kernel failed: {0}")]
    Numerical(String),

    #[error("corrupt spectrum record {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
