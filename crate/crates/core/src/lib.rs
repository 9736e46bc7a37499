//! Laboratory for open ad hoc teamwork.
//!
//! * [`cag`]: static coalitional affinity games with exhaustive stability oracles.
//! * [`graph`]: per-timestep star and complete affinity graphs.
//! * [`world`]: open-team Wolfpack and level-based foraging simulators.
//! * [`nn`]: hand-differentiated networks used by the learner.
//! * [`agent_model`]: type embeddings and the teammate policy model.
//! * [`value`]: graph-factorized joint Q-values with range constraints.
//! * [`train`]: fitted Q-learning with symmetry regularizers.
//! * [`tabular`]: exactly solvable games for checking the Bellman machinery.
//! * [`runner`]: experiment orchestration, evaluation protocol and CSV output.

pub mod agent_model;
pub mod cag;
pub mod error;
pub mod graph;
pub mod nn;
pub mod runner;
pub mod tabular;
pub mod train;
pub mod value;
pub mod world;

pub use error::{Error, Result};
