//! Reverse-mode autodiff, recurrent networks, Adam and checkpoints.

mod adam;
mod checkpoint;
mod graph;
mod model;
mod nets;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, LineageEntry, Stage, FORMAT_VERSION};
pub use graph::{Gradients, Graph, ParamGrads, Var};
pub use model::{ForwardOut, Model, ModelKind};
pub use nets::{seeded_rng, ArchConfig, Blstm, EmbeddingNet, Linear, LstmParams, Module, SeparationNet};
