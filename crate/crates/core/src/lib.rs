//! Simulation and verification of finite-horizon stochastic control problems
//! driven by Lévy noise.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod levy_noise;
pub mod registry;
pub mod stats;
pub mod value;

pub use error::{Error, Result};
