//! Dense tensors and tape-based reverse-mode automatic differentiation.
//!
//! Everything the solvers compute (stages, states, error and stiffness
//! estimates) is recorded on a [`Tape`], so `backward` differentiates the
//! discrete solver itself.

mod dense;
mod gradcheck;
mod ops;
mod tape;

use thiserror::Error;

pub use dense::Tensor;
pub use gradcheck::{check_gradients, finite_difference_gradient, relative_error};
pub use ops::{Activation, OpKind};
pub use tape::{Gradients, NodeId, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("{op}: expected {expected} inputs, got {actual}")]
    Arity {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("variable #{id} is not on this tape")]
    ForeignVar { id: NodeId },
    #[error("{0}")]
    InvalidArgument(String),
}
