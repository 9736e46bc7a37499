//! Minimal differentiable building blocks: dense networks, a gated recurrent
//! cell, message passing, first-order optimizers and checkpoints. Everything is
//! double precision and back-propagated by hand.

pub mod checkpoint;
pub mod gru;
pub mod message;
pub mod mlp;
pub mod optim;
pub mod store;

pub use checkpoint::{Checkpoint, NamedArray};
pub use gru::{GruCell, GruTrace};
pub use message::{MessagePassing, MessageTrace};
pub use mlp::{softplus, sigmoid, Activation, Dense, Mlp, MlpTrace, NetSpec, OutputTransform};
pub use optim::{Optimizer, OptimizerKind};
pub use store::{ParameterStore, Segment, Span};
