//! Traffic-signal control toolkit: a heterogeneous lane-level network model,
//! a deterministic point-queue simulator, baseline and RL-assisted signal
//! controllers, multi-LLM deliberation over candidate timing actions, and a
//! priority-weighted training-data curation pipeline.

pub mod controllers;
pub mod curation;
pub mod deliberation;
pub mod error;
pub mod experiment;
pub mod network;
pub mod scenario;
pub mod sim;

pub use error::{Error, NetworkError, SimError};
