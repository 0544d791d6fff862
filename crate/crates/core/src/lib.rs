//! Discrete-time simulator and policy suite for service migration and
//! computational-resource allocation across a grid of mobile-edge nodes
//! serving moving vehicles.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: edge-node grid, connectivity regimes and hop distances.
//! - [`delay`]: migration, transmission and computation delay terms.
//! - [`allocator`]: closed-form per-node resource allocation and its checks.
//! - [`traces`]: GPS trace parsing, slot resampling and synthetic mobility.
//! - [`env`]: the per-slot decision process (state, step, reward).
//! - [`nn`]: a small dense network engine with Adam and soft updates.
//! - [`agents`]: actor-critic training plus rule-based and evolutionary baselines.
//! - [`harness`]: experiment configuration, sweeps, metrics and plot data.

pub mod agents;
pub mod allocator;
pub mod delay;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod topology;
pub mod traces;

pub use error::{Error, Result};
