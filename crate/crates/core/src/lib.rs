//! Parallel Metropolis-Hastings inference for a one-dimensional seismic
//! event model: serial, naive-parallel and chromatic (static and dynamic)
//! samplers, a synthetic world generator and an evaluation harness.

pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod partition;
pub mod proposals;
pub mod rng;
pub mod samplers;
pub mod scoring;
pub mod worldgen;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use model::{log_joint, Event, ModelConfig, ObservedSignals, World};
