//! Gibbs-posterior estimation over fully connected deep networks.
//!
//! The estimator is the exponentially weighted aggregate: networks are drawn
//! from `rho(theta) ∝ exp(-lambda r_n(theta)) pi(theta)` and their outputs are
//! averaged. Alongside the estimator the crate ships the pieces needed to
//! check its behaviour empirically: synthetic targets and noise models,
//! population excess-risk estimators, numerical PAC-Bayes oracles, and a sweep
//! harness that fits convergence-rate exponents.
//!
//! Data-parallel loops (chains, Monte Carlo risk evaluation, sweep cells) run
//! on rayon when the `parallel` feature is enabled and sequentially otherwise;
//! see [`exec`].

// negated comparisons deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod error;
pub mod exec;
pub mod harness;
pub mod matrix;
pub mod network;
pub mod prior;
pub mod risk;
pub mod sampler;
pub mod synthesis;

pub use error::{Error, Result};
pub use exec::Execution;
pub use harness::{run_cell, run_sweep, RateFit, SweepPlan, SweepTask};
pub use matrix::Matrix;
pub use network::{Activation, ClampSpec, Network, NetworkArchitecture, ParameterVector};
pub use prior::{GibbsConfig, LossKind, PriorSpec};
