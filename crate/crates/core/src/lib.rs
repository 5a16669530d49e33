//! Learned visual reward priors for GP-UCB exploration of articulated mechanisms.
//!
//! A neural network maps a mechanism image and a candidate action to a
//! predicted reward. That prediction serves as the prior mean of a per-context
//! Gaussian process, and GP-UCB picks actions on top of it. The crate bundles
//! the simulated slider/door domain, the GP, the network (with a hand-written
//! backward pass), the acquisition optimizer, and the experiment harness.

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod gp;
pub mod harness;
pub mod mechanism;
pub mod plot;
pub mod prior_net;
pub mod seed;

pub use error::{Error, Result};
