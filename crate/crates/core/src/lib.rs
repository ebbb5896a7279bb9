//! High-dimensional mean tests for triangular arrays with missing values.
//!
//! Rows may have different lengths and cells may be missing. Statistics are
//! normalized column sums; their null law is calibrated by Monte Carlo from a
//! shrinkage covariance estimate.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod covariance;
pub mod error;
pub mod io;
pub mod model;
pub mod montecarlo;
pub mod par;
pub mod rng;
pub mod stats;
pub mod testing;
pub mod verify;

pub use error::{Error, Result};
