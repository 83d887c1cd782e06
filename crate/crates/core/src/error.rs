use thiserror::Error;

use crate::space::{GridLayout, NormTag};

/// Errors raised by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("norm {tag:?} is not defined on {layout:?} grids")]
    IncompatibleNorm { tag: NormTag, layout: GridLayout },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("ellipticity violated: potential {value} < 0 at x = {at}")]
    Ellipticity { value: f64, at: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("resolution: {0}")]
    Resolution(String),

    #[error("precondition refused: {0}")]
    Refused(String),
}

pub type Result<T> = std::result::Result<T, Error>;
