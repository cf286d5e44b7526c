//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Enough to express the recurrent policy and its training losses: matrix
//! products, pointwise maps, embedding gathers, row/column slicing and a
//! fused log-softmax negative log-likelihood. Broadcasting is limited to
//! scalar operands.

mod optim;
mod tape;
mod tensor;

pub use optim::{clip_factor, sgd_step};
pub use tape::{Elementwise, Gradients, Tape, Var};
pub use tensor::{log_softmax, Tensor};

pub(crate) use tensor::{matmul_acc, sigmoid};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {id} out of range (bound {bound})")]
    Index { id: usize, bound: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("tape already differentiated; record a new tape")]
    TapeConsumed,
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("invalid learning rate {0}")]
    LearningRate(f64),
}
