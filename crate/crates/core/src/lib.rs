//! Kolmogorov-Arnold networks and an MLP baseline for univariate time-series
//! classification: data loading, B-spline bases, training, metrics, cost
//! models and interpretation.

pub mod bspline;
pub mod complexity;
pub mod error;
pub mod interpret;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod ucr_data;

pub use error::{Error, Result};
