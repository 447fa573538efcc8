//! Deterministic reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] borrows a [`ParamStore`] immutably while recording a forward
//! pass; [`Tape::backward`] returns [`Gradients`] which are then folded into
//! the store with [`ParamStore::accumulate`] before an optimizer step.

mod array;
pub mod checkpoint;
pub mod embeddings;
pub mod gradcheck;
pub mod init;
mod optim;
mod param;
mod tape;

pub use array::Array;
pub use checkpoint::Checkpoint;
pub use optim::{Algorithm, OptimizerState};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{softmax, Activation, AttentionWeights, GruWeights, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index {index} out of range for size {bound}")]
    Index { index: usize, bound: usize },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
