//! Core library: simulated web worlds, a tree-search agent with process
//! supervision, preference construction, and direct preference training,
//! plus exact oracles that everything is validated against.

pub mod adapter;
pub mod agent;
pub mod critic;
pub mod env;
pub mod error;
pub mod eval;
pub mod mcts;
pub mod oracle;
pub mod preference;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
