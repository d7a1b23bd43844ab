//! Numerical laboratory for even functionals whose negative critical values
//! accumulate at zero.
//!
//! The crate provides finite-dimensional truncations of an ℓ² model with a
//! closed-form critical set, a sublinear energy on an H₀¹ grid together with
//! a wrapper functional built from it, descent solvers, a cutoff
//! pseudo-gradient deformation flow, point-cloud topology with genus
//! certificates, sphere-family minimax bounds, and a shooting solver for the
//! sublinear boundary value problem.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bvp;
pub mod deformation;
pub mod error;
pub mod functional;
pub mod minimax;
pub mod model;
pub mod ode;
pub mod point;
pub mod solvers;
pub mod topology;

pub use error::{Error, Result};
pub use functional::{
    evaluate, fd_gradient_check, gradient, ps_diagnostic, residual, CriticalPoint, Functional, Label, PsReport,
    RelErrorReport, Sign, Smoothness,
};
pub use point::{Point, Space};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
