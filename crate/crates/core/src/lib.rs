//! Numerical toolkit for singular convective p(x)-Laplacian systems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barriers;
pub mod config;
pub mod error;
pub mod expr;
pub mod expspace;
pub mod grid;
pub mod linalg;
pub mod pipeline;
pub mod plaplace;
pub mod sysfix;
pub mod verify;

pub use error::{Error, Result};
