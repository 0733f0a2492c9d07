//! Linear equilibria of a discrete-time insider-trading market with
//! inventory-averse high-frequency traders.
//!
//! - [`model`]: parameters and validation
//! - [`solver`]: monopolist, Nash and taxed equilibria
//! - [`asymptotics`]: high-frequency limits, first-order corrections and
//!   empirical convergence orders
//! - [`value`]: quadratic value functions and dynamic-programming checks
//! - [`simulator`]: seeded Monte Carlo of the market
//! - [`cli`]: command-line front end

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod solver;
pub mod asymptotics;
pub mod value;
pub mod simulator;
pub mod cli;

pub use model::{validate, MarketParams, TraderParams, ValidatedParams};
pub use solver::{Equilibrium, SolveDiagnostics, SolveError};
