//! Simulation and evaluation toolkit for active seismic control of shear buildings.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`] assembles shear-building matrices and integrates the equation
//!   of motion with the Newmark-β method.
//! * [`excitation`] loads, resamples and synthesises ground-acceleration records.
//! * [`environment`] wraps the simulator in a reset/step decision-process contract.
//! * [`lqg`] builds the state-space model and the LQG baseline controller.
//! * [`policy`] defines the [`policy::Controller`] abstraction and the portable
//!   MLP policy evaluator.
//! * [`metrics`] computes the J1–J4 performance ratios.
//! * [`protocol`] and [`evaluation`] expose environments over a line-delimited
//!   JSON wire protocol and run manifest-driven evaluation suites.
//!
//! With the `parallel` feature (on by default) independent runs in an
//! evaluation suite are distributed with rayon; without it everything runs
//! sequentially and produces identical output.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod environment;
mod error;
pub mod evaluation;
pub mod excitation;
pub mod lqg;
pub mod metrics;
pub mod policy;
pub mod protocol;

pub use error::{Error, Result};
