//! Pricing engine for continuously-monitored up-and-out call options.
//!
//! The barrier condition is folded into the terminal payoff through the
//! Brownian-bridge survival probability, which turns the knock-out option
//! into a vanilla-style problem with a modified payoff. That problem is
//! solved three independent ways:
//!
//! * [`analytic`] — closed form built from the reflected joint law of the
//!   running maximum and the terminal value, plus a quadrature fallback;
//! * [`mc`] — two unbiased Monte-Carlo estimators (exact terminal sampling
//!   with the bridge-weighted payoff, and full-path sampling with per-step
//!   bridge survival weights);
//! * [`solver`] — a deep-BSDE training loop where a small feed-forward
//!   network supplies the stochastic-integral control and the learned
//!   initial value is the price.
//!
//! [`experiment`] drives the whole grid of test cases and writes error
//! statistics; the `barrier-bsde` binary exposes everything on the command
//! line.
//!
//! All numeric kernels are generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); training-quality checks assume `f64`, which is the
//! default everywhere.

pub mod analytic;
pub mod bridge;
pub mod checks;
pub mod error;
pub mod experiment;
pub mod market;
pub mod math;
pub mod mc;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Real;

/// Single-precision aliases. All quality gates run in double precision;
/// these exist for lightweight experimentation.
pub type MarketCase32 = market::MarketCase<f32>;
pub type TimeGrid32 = market::TimeGrid<f32>;
pub type Network32 = nn::Network<f32>;

/// Double-precision aliases used by the CLI and the experiment harness.
pub type MarketCase64 = market::MarketCase<f64>;
pub type TimeGrid64 = market::TimeGrid<f64>;
pub type PathBatch64 = market::PathBatch<f64>;
pub type Network64 = nn::Network<f64>;
pub type PriceEstimate64 = analytic::PriceEstimate<f64>;
pub type TrainConfig64 = solver::TrainConfig<f64>;
pub type TrainResult64 = solver::TrainResult<f64>;
