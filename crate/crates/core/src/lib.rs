//! Numerical laboratory for discrete singular Radon transforms along
//! polynomial mappings: Weyl sums, major/minor arc decompositions of the
//! multipliers, and empirical sparse bounds.

pub mod circle_method;
pub mod error;
pub mod fft;
pub mod kernels;
pub mod lattice_fn;
pub mod poly_map;
pub mod sparse;
pub mod stats;
pub mod sum;
pub mod transform;

pub use error::{Error, Result};
pub use num_complex::Complex64;
