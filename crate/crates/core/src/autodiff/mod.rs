//! Shaped tensors, a define-by-run reverse-mode graph, and Adam.
//!
//! A training step binds parameters into a fresh [`Graph`], builds the loss,
//! calls [`Graph::backward`], copies gradients back with
//! [`Graph::write_grad`] and finally runs [`AdamState::step`].

mod adam;
pub mod gradcheck;
mod graph;
mod kernels;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{Graph, Segment, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape: {reason}")]
    InvalidShape { reason: String },
    #[error("{op}: index {index} out of range for size {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("parameter {index} requires a gradient but has none")]
    MissingGradient { index: usize },
    #[error("{reason}")]
    Contract { reason: String },
}
