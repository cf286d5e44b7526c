//! The trainable policy: a token embedding, one GRU layer and an output
//! projection over a vocabulary shared by all environments.
//!
//! Generation conditions on `<bos> x <sep>` and, for refinement, on
//! `<bos> x <sep> a_prev <sep>`; the model then emits a solution followed by
//! `<eos>`. Inference (sampling, greedy decoding, scoring) runs on plain
//! buffers; training records the same computation on an autodiff [`Tape`].
//!
//! [`Tape`]: crate::autodiff::Tape

mod checkpoint;
mod model;
pub mod vocab;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{Inference, ParamVars, Params, PolicyModel, Refined, CONTEXT_BUDGET, INIT_SCALE, PARAM_NAMES};
pub use vocab::Vocab;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: unreadable checkpoint: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: checkpoint version {found} is not supported (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
}

/// Decoding settings for exploration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_len: usize,
    pub k_samples: usize,
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(PolicyError::Precondition(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.max_len == 0 {
            return Err(PolicyError::Precondition("max_len must be at least 1".into()));
        }
        Ok(())
    }
}
