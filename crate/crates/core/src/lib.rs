//! Optimal covariance steering for discrete-time linear time-varying
//! stochastic systems.
//!
//! The nonconvex moment program is relaxed to a linear semidefinite program
//! (one Schur-complement block per step), solved with a conic interior-point
//! backend, and the affine feedback policy `u_k = K_k (x_k − μ_k) + v_k` is
//! recovered from the solution together with a numerical tightness
//! certificate for the relaxation.

extern crate openblas_src;

pub mod backend;
pub mod baseline;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod problem;
pub mod scenarios;
pub mod simulator;
pub mod solution;
pub mod transcriber;

pub use error::{CsError, Result};
