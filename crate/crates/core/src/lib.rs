//! Linear-Gaussian Bayesian inverse problems: posterior algebra, expected
//! information gain (closed forms and Monte Carlo), low-rank spectral
//! evaluation, and D-optimal sensor selection.

pub mod cli;
pub mod design;
pub mod eig;
pub mod error;
pub mod gaussian;
pub mod generate;
pub mod inverse;
pub mod io;
pub mod lowrank;
pub mod numeric;
pub mod report;
pub mod validate;

pub use error::{OedError, Result};
