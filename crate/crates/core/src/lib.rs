//! Monte Carlo laboratory for signed Brownian loop soups, their layering fields and the
//! Gaussian layering field obtained in the high-intensity limit.

#![forbid(unsafe_code)]
// `!(x > 0.0)` is deliberate: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaos;
pub mod correlators;
pub mod error;
pub mod estimate;
pub mod gaussfield;
pub mod geometry;
pub mod harness;
pub mod loopmeasure;
pub mod loops;
pub mod rng;
pub mod soup;
pub mod stats;

pub use error::{Error, Result};
pub use estimate::Estimate;
pub use geometry::{Domain, Point};
