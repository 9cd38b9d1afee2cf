//! Minimal differentiable core: 2-D dense tensors, a define-by-run tape with
//! reverse-mode gradients, grouped parameters with freeze flags, Adam, and a
//! central-difference gradient checker.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GroupCheck};
pub use graph::{CrossAttention, ExpectileSign, Graph, Linear, NodeId};
pub use optim::{optimizer_step, AdamConfig};
pub use params::{Grads, ParamGroup, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnetError {
    #[error("non-finite value produced at node {node}")]
    NonFinite { node: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gradient check failed: max relative error {max_rel_err:.3e} exceeds {tolerance:.1e}")]
    GradCheck { max_rel_err: f64, tolerance: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
