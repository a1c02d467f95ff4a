use thiserror::Error;

/// Errors raised by estimation, generation, and I/O routines.
#[derive(Debug, Error)]
pub enum FggmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error(
        "covariance selection did not converge after {iterations} sweeps \
         (edge residual {edge_residual:.3e}, non-edge precision residual {precision_residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        edge_residual: f64,
        precision_residual: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the command-line driver to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

impl FggmError {
    pub fn class(&self) -> ErrorClass {
        match self {
            FggmError::DimensionMismatch(_) | FggmError::InvalidArgument(_) | FggmError::Parse { .. } => {
                ErrorClass::Validation
            }
            FggmError::NotPositiveDefinite(_) | FggmError::NonConvergence { .. } | FggmError::Singular(_) => {
                ErrorClass::Numerical
            }
            FggmError::Io(_) | FggmError::Csv(_) | FggmError::Json(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T, E = FggmError> = std::result::Result<T, E>;
