use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, OedError>;

#[derive(Debug, Error)]
pub enum OedError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e} exceeds {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("combinatorial budget exceeded: C({pool}, {budget}) = {count} > {limit}")]
    BudgetExceeded {
        pool: usize,
        budget: usize,
        count: u128,
        limit: u128,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Validation { path: PathBuf, message: String },
}

impl OedError {
    /// True for failures that come from numerics (factorizations, eigensolvers)
    /// rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            OedError::NotPositiveDefinite | OedError::NonFinite | OedError::NotSymmetric { .. }
        )
    }

    pub(crate) fn at_path(self, path: impl Into<PathBuf>) -> OedError {
        let path = path.into();
        match self {
            e @ (OedError::Io { .. } | OedError::Parse { .. } | OedError::Validation { .. }) => e,
            other => OedError::Validation {
                path,
                message: other.to_string(),
            },
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(OedError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
