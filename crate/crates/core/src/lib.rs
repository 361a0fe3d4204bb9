//! Successive elimination for nonparametric multi-armed bandits with covariates.
//!
//! The crate is organized bottom-up:
//!
//! - [`env`]: static and covariate bandit machines, the oracle, gap functions
//!   and Monte Carlo verifiers for the smoothness and margin conditions.
//! - [`se`]: the static successive elimination state machine, its confidence
//!   radius, and a UCB baseline.
//! - [`partition`]: regular and dyadic partitions of `[0,1]^d` and the
//!   adaptive tree used by adaptively binned elimination.
//! - [`policies`]: binned (BSE) and adaptively binned (ABSE) successive
//!   elimination, their parameter calculators, and the doubling wrapper.
//! - [`harness`]: seeded simulation, regret traces, aggregation, closed-form
//!   comparators, scaling fits and the peeling maximal-inequality check.
//! - [`suites`]: the named statistical check suites driven by the CLI and
//!   the acceptance tests.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which is what the harness uses.

// Negated float comparisons reject NaN inputs on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod harness;
pub mod partition;
pub mod policies;
pub mod rng;
pub mod scalar;
pub mod se;
pub mod suites;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Static machine with `f64` means.
pub type StaticMachine = env::StaticMachine<f64>;
/// Covariate machine over `f64`.
pub type CovariateMachine = env::CovariateMachine<f64>;
/// Either kind of machine over `f64`.
pub type Machine = env::Machine<f64>;
/// Successive elimination over `f64`.
pub type SuccessiveElimination = se::SuccessiveElimination<f64>;
/// UCB baseline over `f64`.
pub type Ucb = se::Ucb<f64>;
/// Binned successive elimination over `f64`.
pub type Bse = policies::Bse<f64>;
/// Adaptively binned successive elimination over `f64`.
pub type Abse = policies::Abse<f64>;
