//! Robust identification of `x_{t+1} = A f(x_t) + d_t` from a single
//! trajectory whose disturbances are an unknown, randomly timed mix of zeros
//! and arbitrary attacks.
//!
//! The estimator minimizes the sum of unsquared residual norms, which
//! recovers the ground truth exactly once enough clean steps are observed.
//! [`certificates`] decides, for a given attack pattern, whether that has
//! happened; [`experiments`] runs the recovery studies.

pub mod attacks;
pub mod certificates;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use rng::RngStream;

/// Crate version, written into every CSV header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
