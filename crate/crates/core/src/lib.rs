//! Wong-Zakai approximation of the one-dimensional stochastic heat equation.
//!
//! The crate builds mollified space-time noise, the Brownian functionals
//! that produce the renormalization constant `c_ε = c_*/ε + σ_*²/2`, two
//! independent solvers for the regularized equation (finite differences and
//! Feynman-Kac Monte Carlo), reference solutions of the limiting equation,
//! and the homogenization family `v_{ε,α}`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod homogenization;
pub mod mollifier;
pub mod noise;
pub mod quadrature;
pub mod rng;
pub mod she;
pub mod solver;
pub mod stats;

pub use error::{LabError, Result};
pub use mollifier::{Covariance, CovarianceTable, CrossCovariance, MollifierSpec, ZeroCovariance};
pub use noise::{GridSpec, MollifiedField, WhiteNoiseRealization};
pub use stats::EstimateWithCI;
