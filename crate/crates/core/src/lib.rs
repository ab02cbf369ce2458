//! Smoothed method-of-moments and GMM estimation for parameters identified by
//! conditional quantile restrictions with instrumental variables.
//!
//! The indicator inside the quantile moment `Z [1{Λ ≤ 0} − τ]` is replaced by a
//! smooth surrogate, which makes the sample moments differentiable in the
//! parameter. Exactly identified models are solved as a root-finding problem
//! ([`estimators::estimate_mm`]); over-identified models minimise a weighted
//! quadratic form ([`estimators::estimate_gmm`]).
//!
//! Module map:
//!
//! - [`smoothing`]: the smoothed indicator and its kernel derivative.
//! - [`model`]: datasets and pluggable residual functions.
//! - [`moments`]: smoothed/unsmoothed moment vectors and the moment Jacobian.
//! - [`covariance`]: Ω̄, HAC long-run variances, asymptotic covariances.
//! - [`optimize`]: damped Newton, simulated annealing and Gauss–Newton polish.
//! - [`estimators`]: MM, one-step, two-step/identity GMM, QR and 2SLS.
//! - [`bandwidth`]: smoothing-bandwidth policies.
//! - [`simulation`]: data-generating processes and the Monte Carlo harness.
//! - [`euler`]: the quantile consumption Euler equation application.

pub mod bandwidth;
pub mod covariance;
pub mod error;
pub mod estimators;
pub mod euler;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod optimize;
pub mod simulation;
pub mod smoothing;

pub use error::{Error, Result};
