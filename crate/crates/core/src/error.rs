//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the library.
///
/// `Domain` covers caller mistakes (arguments outside a documented
/// precondition); `Consistency` covers violations of internal invariants and
/// indicates a bug or numerically hostile input rather than misuse.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Domain(String),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("calibration records are missing lines {0:?}")]
    MissingLines(Vec<u8>),
    #[error("row {row}: {msg}")]
    CsvSchema { row: usize, msg: String },
    #[error("all outcome probabilities vanish at phi = {phi}")]
    AllOutcomesZero { phi: f64 },
    #[error("Fisher information is singular at phi = {phi}: probability below {eps:e} with non-vanishing slope")]
    SingularPoint { phi: f64, eps: f64 },
    #[error("non-finite Fisher information at phi = {phi}")]
    NonFinite { phi: f64 },
    #[error("scan spans {span:.6} rad but one period of the harmonic-{harmonic} model is {period:.6} rad")]
    InsufficientSpan {
        span: f64,
        period: f64,
        harmonic: u32,
    },
    #[error("curve '{label}' has {got} points; at least {need} are required")]
    InsufficientPoints {
        label: String,
        got: usize,
        need: usize,
    },
    #[error("unknown outcome label '{0}'")]
    UnknownLabel(String),
    #[error("covariance matrix is not usable (non-finite entries)")]
    SingularCovariance,
    #[error("fit did not converge after {iterations} iterations (last visibility {last_visibility})")]
    NonConvergence {
        iterations: usize,
        last_visibility: f64,
    },
    #[error("expected count {lambda:.3e} exceeds the 2^31 sampling guard")]
    CountOverflow { lambda: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn consistency(msg: impl Into<String>) -> Self {
        Error::Consistency(msg.into())
    }
}
