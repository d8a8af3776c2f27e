use thiserror::Error;

/// Failure classes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NpeError {
    #[error("invalid medium: {0}")]
    InvalidMedium(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("point {0:?} lies outside the extended domain")]
    OutOfDomain([f64; 3]),
    #[error("geodesic did not exit the domain within length budget {0}")]
    NoExit(f64),
    #[error("request outside the Fermi chart: {0}")]
    OutOfChart(String),
    #[error("degenerate matrix: {0}")]
    Degenerate(String),
    #[error("numerical instability: {0}")]
    Instability(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("under-resolved quadrature: {0}")]
    Resolution(String),
    #[error("critical point not found: {0}")]
    NotFound(String),
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
}

impl NpeError {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            NpeError::Instability(_) | NpeError::NonFinite(_) | NpeError::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, NpeError>;
