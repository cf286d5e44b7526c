//! The self-training loop: explore and refine candidate solutions, grade
//! them in the environment, keep the better of each pair in the candidate
//! pool, rank by self-reward, select positive and contrastive training sets,
//! retrain, evaluate. Also hosts the STaR-style and SFT+DPO baselines and
//! the ablation switches.

mod config;
mod explore;
mod run;
mod select;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::env::EnvError;
use crate::metrics::MetricsError;
use crate::policy::PolicyError;
use crate::store::StoreError;

pub use config::{Ablation, Method, RunConfig, TrainMode};
pub use explore::{evaluate, explore_phase, explore_task, solved_ids, EvalOutcome, Explored};
pub use run::{run, run_star_env, run_sft_dpo, run_with, IterationReport, RunOutput};
pub use select::{select_u1, select_u2, shuffle_ranks, TrainingSets, U1Entry, U2Entry};
pub use train::{dpo_loss, train_dpo, train_iteration, DpoPair, LossReport, TrainParams};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("training aborted: {0}")]
    NonFiniteLoss(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<AutodiffError> for EngineError {
    fn from(e: AutodiffError) -> Self {
        Self::Policy(e.into())
    }
}

/// What a random stream is used for; streams never overlap.
#[derive(Clone, Copy, Debug)]
pub enum Purpose {
    Init = 1,
    Warmup = 2,
    Explore = 3,
    Select = 4,
    Train = 5,
    Checkpoint = 6,
}

/// Independent ChaCha stream keyed by the run seed and selected by
/// `(purpose, iteration, index)`.
pub fn stream(seed: u64, purpose: Purpose, iteration: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | ((iteration as u64 & 0xFF_FFFF) << 32) | (index as u64 & 0xFFFF_FFFF));
    rng
}
