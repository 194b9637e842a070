//! Minimal dense tensor engine with reverse-mode automatic differentiation.
//!
//! The engine is built around a [`Graph`]: forward operations append nodes to
//! a tape that is topologically ordered by construction, and [`Graph::backward`]
//! walks it in reverse to populate gradients. Values are plain row-major
//! buffers; `f32` is used for training and `f64` for gradient checking.

mod checkpoint;
mod element;
mod error;
mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use element::Element;
pub use error::TensorError;
pub use gradcheck::{grad_check, GradCheckOpts};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
