use thiserror::Error;

pub type Result<T> = std::result::Result<T, CmmdError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmmdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("overlap violated: propensity {value} at point {index} lies outside [{delta}, 1 - {delta}]")]
    Overlap { index: usize, value: f64, delta: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("propensity produced an empty sample side {attempts} times in a row")]
    DegeneratePropensity { attempts: usize },

    #[error("bootstrap replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<CmmdError>,
    },
}

impl CmmdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CmmdError::InvalidInput(msg.into())
    }

    /// True for errors caused by malformed input or configuration, as
    /// opposed to numerical or runtime failures on valid input.
    pub fn is_input_error(&self) -> bool {
        match self {
            CmmdError::InvalidInput(_) | CmmdError::DimensionMismatch { .. } => true,
            CmmdError::Replicate { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
