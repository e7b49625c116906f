//! Online estimation of drift parameters of second-order SDEs
//!
//! ```text
//! dU = (f(X, U) + F(X, U) θ) dt + √σ dW,    dX = U dt
//! ```
//!
//! from sampled positions only. Velocities are reconstructed by finite
//! differences, which makes the textbook SGD and Kalman updates biased:
//! the gain and the second-order velocity increment share sample points.
//! Shifting the innovation two samples ahead of the gain removes the
//! overlap. This crate provides both the biased and the shifted
//! estimators, a shifted maximum-likelihood fit, a quadratic-variation
//! diffusion estimator, a reference simulator and Monte Carlo diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod models;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod velocity;

pub use error::{Error, Result};
pub use models::{make_cubic, make_ou, ModelSpec};
pub use simulate::{generate_reference, SimConfig, Trajectory};
pub use velocity::{midpoint_velocities, VelocitySeries};
