//! Deformed inhomogeneous Wigner matrices: sampling, outlier statistics and
//! the ribbon-graph moment expansion.

// `!(x <= y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod combinatorics;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod fluctuation;
pub mod lanczos;
pub mod par;
pub mod profile;
pub mod quadrature;
pub mod spectral;
pub mod stats;
pub mod wick;

pub use error::{Error, Result};
