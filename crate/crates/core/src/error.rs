use thiserror::Error;

/// Errors raised by estimation, selection and inference routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank deficiency: {0}")]
    Rank(String),

    /// First-stage explained variance too small for the OLS/TSLS formulas.
    #[error("weak instruments: explained first-stage variance {gamma_sq:.3e} is not positive")]
    WeakInstrument { gamma_sq: f64 },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid design: {0}")]
    Design(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),
}

pub type Result<T> = std::result::Result<T, Error>;
