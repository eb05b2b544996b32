//! Deterministic reverse-mode tensor layer and the occlusion-aware TCN.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod objective;
pub mod optim;
pub mod tape;
pub mod tcn;
mod tensor;

pub use layers::{batchnorm_1d, conv1d_temporal, dropout, occlusion_gate, relu, sigmoid};
pub use objective::{loss_and_grads, Batch, StepOutput};
pub use optim::{sgd_step, Sgd};
pub use tape::{Tape, Var};
pub use tcn::{init_params, tcn_forward, ParameterStore, TcnConfig, Variant};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
