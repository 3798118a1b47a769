//! Fuzzy particle swarm reinforcement learning.
//!
//! Policies are small sets of Gaussian fuzzy rules. A particle swarm tunes
//! their parameters against neural world models learned from a fixed batch
//! of transitions recorded on the plant.

pub mod data;
pub mod dynamics;
pub mod error;
pub mod fuzzy;
pub mod rl_eval;
pub mod seed;
pub mod state;
pub mod swarm;
pub mod worldmodel;

pub use error::{Error, Result};
pub use state::State;
