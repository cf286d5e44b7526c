use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::env::EnvKind;
use crate::store::DEFAULT_POOL_CAP;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Envisions,
    StarEnv,
    SftDpo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Envisions => "envisions",
            Self::StarEnv => "star_env",
            Self::SftDpo => "sft_dpo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Reinitialise the policy before each iteration's training.
    Scratch,
    Continual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "no_self_refine")]
    NoSelfRefine,
    #[serde(rename = "no_self_reward")]
    NoSelfReward,
    #[serde(rename = "no_candidate_pool")]
    NoCandidatePool,
    #[serde(rename = "no_L2")]
    NoL2,
}

fn default_n_held_in() -> usize {
    200
}
fn default_n_held_out() -> usize {
    50
}
fn default_d_model() -> usize {
    32
}
fn default_hidden() -> usize {
    64
}
fn default_warmup_tasks() -> usize {
    20
}
fn default_pool_cap() -> usize {
    DEFAULT_POOL_CAP
}
fn default_true() -> bool {
    true
}
fn default_temperature() -> f64 {
    1.0
}
fn default_batch_size() -> usize {
    1
}
fn default_clip() -> f64 {
    1.0
}
fn default_workers() -> usize {
    1
}
fn default_probe_pairs() -> usize {
    64
}

/// Everything that determines a run. Together with the dataset it fixes the
/// output bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub method: Method,
    /// Candidates sampled per task and iteration.
    #[serde(rename = "K")]
    pub k: usize,
    /// Positive-only training solutions per task.
    #[serde(rename = "N1")]
    pub n1: usize,
    /// Positive/negative training pairs per task.
    #[serde(rename = "N2")]
    pub n2: usize,
    pub iterations: usize,
    pub train_mode: TrainMode,
    #[serde(default)]
    pub ablations: BTreeSet<Ablation>,
    pub epochs_per_iter: usize,
    pub lr: f64,
    pub dpo_beta: f64,
    pub seed: u64,

    /// Directory written by `gen-data`; generated in memory when absent.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_n_held_in")]
    pub n_held_in: usize,
    #[serde(default = "default_n_held_out")]
    pub n_held_out: usize,
    /// Defaults to `seed`.
    #[serde(default)]
    pub dataset_seed: Option<u64>,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_warmup_tasks")]
    pub warmup_tasks: usize,
    /// Defaults to `epochs_per_iter`.
    #[serde(default)]
    pub warmup_epochs: Option<usize>,
    #[serde(default = "default_pool_cap")]
    pub pool_cap: usize,
    #[serde(default = "default_true")]
    pub seed_pool: bool,
    #[serde(default)]
    pub rescore_pool: bool,
    #[serde(default)]
    pub eval_refine: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Defaults to the environment's solution length bound.
    #[serde(default)]
    pub max_len: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_probe_pairs")]
    pub probe_pairs: usize,
}

impl RunConfig {
    /// Defaults for the optional fields plus the given required ones.
    pub fn new(env: EnvKind, method: Method, seed: u64) -> Self {
        Self {
            env,
            method,
            k: 5,
            n1: 10,
            n2: 2,
            iterations: 5,
            train_mode: if method == Method::SftDpo {
                TrainMode::Continual
            } else {
                TrainMode::Scratch
            },
            ablations: BTreeSet::new(),
            epochs_per_iter: 30,
            lr: 0.1,
            dpo_beta: 0.1,
            seed,
            dataset: None,
            n_held_in: default_n_held_in(),
            n_held_out: default_n_held_out(),
            dataset_seed: None,
            d_model: default_d_model(),
            hidden: default_hidden(),
            warmup_tasks: default_warmup_tasks(),
            warmup_epochs: None,
            pool_cap: default_pool_cap(),
            seed_pool: true,
            rescore_pool: false,
            eval_refine: false,
            temperature: default_temperature(),
            max_len: None,
            batch_size: default_batch_size(),
            clip: default_clip(),
            workers: default_workers(),
            probe_pairs: default_probe_pairs(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let config: Self = serde_json::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |key: &str, why: &str| Err(EngineError::Config(format!("`{key}` {why}")));
        if self.k == 0 {
            return bad("K", "must be at least 1");
        }
        if self.n1 == 0 {
            return bad("N1", "must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        if !self.ablations.is_empty() && self.method != Method::Envisions {
            return bad("ablations", "only apply to method envisions");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be a positive number");
        }
        if !(self.dpo_beta > 0.0 && self.dpo_beta.is_finite()) {
            return bad("dpo_beta", "must be a positive number");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be a positive number");
        }
        if !(self.clip > 0.0) {
            return bad("clip", "must be positive");
        }
        if self.max_len == Some(0) {
            return bad("max_len", "must be at least 1");
        }
        for (key, v) in [
            ("n_held_in", self.n_held_in),
            ("n_held_out", self.n_held_out),
            ("d_model", self.d_model),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("workers", self.workers),
            ("pool_cap", self.pool_cap),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        if self.warmup_tasks > self.n_held_in {
            return bad("warmup_tasks", "exceeds n_held_in");
        }
        Ok(())
    }

    pub fn has(&self, ablation: Ablation) -> bool {
        self.ablations.contains(&ablation)
    }

    /// Whether exploration includes the refinement step.
    pub fn refines(&self) -> bool {
        self.method == Method::Envisions && !self.has(Ablation::NoSelfRefine)
    }

    /// Whether positive/negative pairs enter the loss.
    pub fn uses_pairs(&self) -> bool {
        match self.method {
            Method::Envisions => !self.has(Ablation::NoL2) && !self.has(Ablation::NoSelfRefine),
            Method::StarEnv => false,
            Method::SftDpo => true,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len.unwrap_or_else(|| self.env.max_solution_len())
    }

    pub fn dataset_seed(&self) -> u64 {
        self.dataset_seed.unwrap_or(self.seed)
    }

    pub fn warmup_epochs(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs_per_iter)
    }
}
