//! Dense `f64` numerics: tensors, a reverse-mode tape, layers, Adam, and
//! direct solvers for logistic and ridge regression.

mod adam;
mod layers;
mod solve;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{Linear, Mlp, ParamId, ParamStore, Parameter, CHECKPOINT_HEADER};
pub use solve::{fit_logistic, fit_ridge, LogisticFit, LOGISTIC_L2};
pub use tape::{sigmoid, softmax_rows, softplus, OpKind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::gemm;

use crate::error::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("backward called without a recorded forward pass")]
    NoForward,
    #[error("optimizer state is not initialized for these parameters")]
    AdamUninitialized,
    #[error("treatment/label vector has a single class ({0}); handle the degenerate case before fitting")]
    SingleClass(u8),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("system is rank deficient (lambda = {lambda})")]
    RankDeficient { lambda: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
}

impl NnError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            NnError::NonFinite { .. } | NnError::RankDeficient { .. } => ErrorKind::Numeric,
            NnError::AdamUninitialized | NnError::NoForward => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}
