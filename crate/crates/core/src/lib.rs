//! Maximum-likelihood estimation of the static parameters of a linear-Gaussian
//! multiple target tracking model.
//!
//! The crate simulates MTT data, filters association hypotheses with an
//! L-best-assignment particle filter, smooths additive sufficient statistics
//! with exact forward-only recursions, and turns them into parameter estimates
//! through a closed-form M-step. Three estimators are provided in [`em`]:
//! exact EM given the true associations, batch stochastic-approximation EM and
//! SMC online EM.

// Lets the shared test oracles name this crate the same way from unit and
// integration tests.
extern crate self as mtt_core;

pub mod assignment;
pub mod em;
pub mod error;
pub mod io;
pub mod kalman;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod smc;
pub mod smoothing;

pub use error::{MttError, Result};

#[cfg(test)]
#[path = "../tests/common/mod.rs"]
mod testutil;
