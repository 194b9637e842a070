//! Networks whose activations anneal into grouped winner-takes-all
//! operators, plus the training loop and analysis instrumentation around
//! them: multiplication counting, win statistics, noise robustness, and
//! few-shot transfer evaluation.

pub mod analysis;
pub mod model;
pub mod train;
pub mod util;
pub mod wta;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("group {group} does not divide {channels} channels")]
    Divisibility { channels: usize, group: String },
    #[error("schedule step {step} out of range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("bad temperature schedule: {0}")]
    BadSchedule(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss {loss} at optimizer step {step}; aborting")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("insufficient examples: {0}")]
    InsufficientExamples(String),
    #[error("invalid corruption severity {0} (expected 0..=5)")]
    InvalidSeverity(usize),
    #[error("activation traces require anneal or winner-takes-all mode")]
    TraceNeedsGroupedMode,
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint tensor {0} has wrong shape")]
    CheckpointShape(String),
    #[error(transparent)]
    Tensor(#[from] dham_tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, NetError>;
