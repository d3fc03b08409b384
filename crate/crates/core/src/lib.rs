//! Local volatility versus the regime-mixing model it is projected from.
//!
//! A two-branch mixing model has deterministic realized variance, yet the
//! Dupire local-volatility model fitted to its call prices produces random
//! realized variance with the same mean. Convex payoffs on realized variance
//! are therefore priced *higher* under local volatility. This crate builds the
//! mixing model, its closed-form local and double-local variance surfaces,
//! Euler–Maruyama simulators for the projected models, Monte Carlo payoff
//! estimates, and corridor lower bounds on pathwise realized variance.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod checks;
pub mod dlocalvol;
pub mod error;
pub mod localvol;
pub mod mc;
pub mod model;
pub mod numeric;
mod parallel;
pub mod rng;
pub mod sde;

pub use bounds::{corridor_lower_bound, BoundResolution, CorridorSpec};
pub use dlocalvol::{bound_constant, DoubleLocalSurface};
pub use error::{Error, Result};
pub use localvol::{call_price_mixture, dupire_sigma_sq, LocalVolSurface};
pub use mc::{estimate_payoff, McEstimate, Payoff};
pub use model::{MixtureSpec, PiecewiseConstRate};
pub use rng::RngConfig;
pub use sde::{
    build_grid, simulate_double_localvol, simulate_localvol, SimBatch, SimOptions, TimeGrid,
};

/// Crate version embedded in output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
