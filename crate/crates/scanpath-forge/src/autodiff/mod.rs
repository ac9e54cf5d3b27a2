//! Minimal reverse-mode automatic differentiation over double-precision
//! tensors.
//!
//! The design is a classic Wengert tape: [`Tape`] records every operation as
//! it executes, [`Tape::backward`] replays the record in exact reverse order
//! and accumulates gradients additively. Forward and backward on one tape are
//! single-threaded; independent tapes may run in parallel with read-only
//! access to shared parameter values.
//!
//! Everything is `f64`. No external ML framework is involved.

mod kernels;
mod optim;
mod store;
mod tape;
mod tensor;

use thiserror::Error;

pub use optim::{adam_step, AdamConfig, AdamState};
pub use store::{kaiming_uniform, ParamStore, Parameter, TapeBinding};
pub use tape::{Tape, VarId};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} requires an odd kernel size, got {k}")]
    EvenKernel { op: &'static str, k: usize },
    #[error("stride must be at least 1")]
    BadStride,
    #[error("leaky relu slope must be nonnegative, got {0}")]
    BadSlope(f64),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AutodiffError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
