//! Discrete planar magnetizations on a pixel grid: loop decompositions of
//! divergence-free edge measures, the magnetostatic forward model for a
//! measurement plane above the sample, and total-variation regularized
//! inversion with optimality certificates.

pub mod error;
pub mod experiments;
pub mod field;
pub mod geometry;
pub mod graph;
pub mod inversion;
pub mod loops;
pub mod measures;

pub use error::{Error, Result};
