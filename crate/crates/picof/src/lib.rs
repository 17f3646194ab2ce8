//! Physics-informed correction factors for machine-learning surrogates,
//! embedded in a safe constrained Bayesian-optimization / real-time
//! optimization loop.
//!
//! The crate is organized around the bilevel structure of the method:
//!
//! * [`gp`] — exact Gaussian-process regression per output channel;
//! * [`physics`] — residual systems `F(x, p) = 0` with output Jacobians;
//! * [`reconcile`] — the inner problem: correction factors minimizing the
//!   squared physics residuals plus a weighted penalty;
//! * [`outer`] — the outer safe-BO problem, its derivative-free solver, and
//!   the closed plant loop;
//! * [`plants`] — ground-truth simulators (1-D toy system, five-stack fuel
//!   cell);
//! * [`experiments`] — scripted scenario runs, traces, and comparisons;
//! * [`trace`] — per-trial records and their CSV/JSON serialization.
//!
//! All core math is generic over the scalar type via [`scalar::Scalar`];
//! the built-in scenarios and the CLI use the `f64` aliases below.

pub mod error;
pub mod experiments;
pub mod gp;
pub mod outer;
pub mod physics;
pub mod plants;
pub mod reconcile;
pub mod scalar;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases used by the built-in scenarios and the CLI.
pub type GpModel64 = gp::GpModel<f64>;
pub type GpHyperparams64 = gp::GpHyperparams<f64>;
pub type Dataset64 = gp::Dataset<f64>;
pub type SurrogateBundle64 = gp::SurrogateBundle<f64>;
pub type PhysicsSystem64 = physics::PhysicsSystem<f64>;
pub type ReconciliationResult64 = reconcile::ReconciliationResult<f64>;
