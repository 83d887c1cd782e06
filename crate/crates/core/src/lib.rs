//! Tikhonov functionals on uniform grids, their discrete approximations, and
//! numerical studies of how minima and minimizers of the approximations
//! converge.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fem;
pub mod forward;
pub mod gamma;
pub mod solve;
pub mod space;
pub mod tikhonov;

pub use error::{Error, Result};
pub use space::{Grid, GridFunction, GridLayout, NormTag};
