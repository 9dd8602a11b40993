//! Reverse-mode automatic differentiation over dense real matrices.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] sweeps it once in
//! reverse. Tapes are cheap and meant to be rebuilt for every forward pass.

mod gradcheck;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{compare_gradients, finite_difference_gradient, GradComparison};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("shape {shape:?} does not match {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op} takes {expected} input(s), got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("slice [{start}, {end}) on axis {axis} out of range for shape {shape:?}")]
    InvalidSlice { axis: usize, start: usize, end: usize, shape: Vec<usize> },
    #[error("unknown tape node {0}")]
    UnknownVar(usize),
    #[error("non-finite function value {value} while perturbing coordinate {coordinate}")]
    NonFinite { coordinate: usize, value: f64 },
    #[error("{0}")]
    InvalidArgument(String),
}
