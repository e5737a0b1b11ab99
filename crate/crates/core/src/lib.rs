//! Post-hoc calibration of personalized ranking scores.
//!
//! A ranking model produces unbounded scores `s = f(u, i)`. This crate maps
//! those scores to preference probabilities with monotone calibrators
//! (Platt, Gaussian, Gamma, Beta, histogram and isotonic binning), fits the
//! parametric ones by constrained maximum likelihood under naive, ideal or
//! inverse-propensity-scored risks, and evaluates the result with ECE, MCE,
//! NLL and reliability tables.
//!
//! The [`synthetic`] module simulates missing-not-at-random feedback with known
//! ground truth, which is what the exact-expectation oracles in [`fitting`]
//! and [`synthetic`] are checked against.

pub mod calibrators;
pub mod dataset;
mod error;
pub mod fitting;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod propensity;
pub mod ranker;
pub mod report;
pub mod synthetic;

pub use error::{Error, Result};
