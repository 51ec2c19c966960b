//! Dense tensors, a reverse-mode tape, Adam and a finite-difference checker.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{compare_gradients, finite_difference_check, relative_error, GradCheckReport};
pub use tape::{softmax, Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{log_sigmoid, sigmoid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("shape {shape:?} needs {} elements, got {len}", shape[0] * shape[1])]
    ElementCount { shape: [usize; 2], len: usize },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: [usize; 2] },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
}
