//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a [`Tape`] as they run. [`Tape::backward`]
//! then sweeps the records in reverse creation order and accumulates
//! vector-Jacobian products into every parameter leaf.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport, TapeFn};
pub use tape::{Gradients, Tape, Var, KL_FLOOR};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value entering {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; call reset_backward first")]
    BackwardTwice,
}
