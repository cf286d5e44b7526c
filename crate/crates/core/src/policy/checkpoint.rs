//! Versioned JSON checkpoints.
//!
//! Layout (version 1):
//!
//! ```text
//! { "format": "envisions-policy", "version": 1,
//!   "vocab": [token, ...], "d_model": 32, "hidden": 64, "init_seed": 7,
//!   "params": { "embed": Tensor, "w_ih": Tensor, ... },
//!   "rng": <ChaCha8 state>, "excluded_task_ids": [...], "max_len": null }
//! ```
//!
//! Floats are written in shortest round-trip form, so a loaded model scores
//! bit-identically to the saved one.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Params, PARAM_NAMES};
use super::{PolicyError, PolicyModel, Vocab};
use crate::autodiff::Tensor;

pub const CHECKPOINT_FORMAT: &str = "envisions-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A model together with the sampling stream position and the bookkeeping
/// evaluation needs to reproduce a run's numbers.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: PolicyModel,
    pub rng: ChaCha8Rng,
    /// Tasks consumed by warmup, which evaluation skips.
    pub excluded_task_ids: Vec<String>,
    /// Decoding length override; `None` uses the environment default.
    pub max_len: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct FileV1 {
    format: String,
    version: u32,
    vocab: Vocab,
    d_model: usize,
    hidden: usize,
    init_seed: u64,
    params: BTreeMap<String, Tensor>,
    rng: ChaCha8Rng,
    excluded_task_ids: Vec<String>,
    max_len: Option<usize>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let m = &self.model;
        let file = FileV1 {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            vocab: m.vocab().clone(),
            d_model: m.d_model(),
            hidden: m.hidden(),
            init_seed: m.rng_seed(),
            params: PARAM_NAMES
                .iter()
                .zip(m.params())
                .map(|(n, p)| (n.to_string(), p.clone()))
                .collect(),
            rng: self.rng.clone(),
            excluded_task_ids: self.excluded_task_ids.clone(),
            max_len: self.max_len,
        };
        let text = serde_json::to_string(&file).expect("checkpoint serializes");
        fs::write(path, text).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let corrupt = |message: String| PolicyError::Corrupt {
            path: path.to_path_buf(),
            message,
        };
        let header: Header = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(corrupt(format!("unexpected format `{}`", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Version {
                path: path.to_path_buf(),
                found: header.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut file: FileV1 = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        let mut params = Vec::with_capacity(PARAM_NAMES.len());
        for name in PARAM_NAMES {
            let p = file
                .params
                .remove(name)
                .ok_or_else(|| corrupt(format!("missing parameter `{name}`")))?;
            params.push(Tensor::new(p.shape().to_vec(), p.values().to_vec()).map_err(|e| corrupt(e.to_string()))?);
        }
        let params: Params = params.try_into().expect("one tensor per parameter name");
        let model = PolicyModel::from_parts(file.vocab, file.d_model, file.hidden, file.init_seed, params)
            .map_err(|e| corrupt(e.to_string()))?;
        Ok(Self {
            model,
            rng: file.rng,
            excluded_task_ids: file.excluded_task_ids,
            max_len: file.max_len,
        })
    }
}
