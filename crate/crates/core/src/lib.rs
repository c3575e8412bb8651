//! Primal lower bounds and dual upper bounds for the value function of
//! stochastic optimal control problems with controlled drift and diffusion.
//!
//! The value `V(t, x) = sup_π E[∫ l ds + g(X_T)]` is sandwiched between
//!
//! * a Monte-Carlo estimate of `J(t, x, π)` for a feedback policy
//!   ([`primal::primal_bound`]), and
//! * two dual bounds built from any smooth test function `h`: the pathwise
//!   bound [`dual::dual_v1`] (an anticipative optimisation on every frozen
//!   noise path) and the pointwise bound [`dual::dual_v2`] (a time integral
//!   of spatial suprema of the HJB residual).
//!
//! Both dual bounds are tight when `h` solves the HJB equation; the
//! [`search`] module minimises them over parametric families of `h`.

// `!(a < b)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod dual;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod model;
pub mod paths;
pub mod primal;
pub mod registry;
pub mod search;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{ControlProblem, ControlSet, ParametricFamily, Policy, TestFunction};
pub use paths::{BrownianPath, TimeGrid, TrajectoryRecord};
pub use primal::{BoundEstimate, BoundKind};
pub use smallvec::smallvec;
