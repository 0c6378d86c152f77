use thiserror::Error;

/// Errors surfaced by model construction, engines, and ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Density queries on a point mass are undefined.
    #[error("density undefined for degenerate model")]
    DegenerateDensity,

    #[error("no other utilities")]
    NoOtherUtilities,

    #[error("mismatched grid steps: {0} vs {1}")]
    MismatchedGridStep(f64, f64),

    /// The requested engine does not apply to this scenario class.
    #[error("engine mismatch: {0}")]
    EngineMismatch(String),

    /// A quadrature refinement loop could not reach its contract tolerance.
    #[error("quadrature tolerance not met: {0}")]
    ToleranceNotMet(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
