use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::store::{RankedSets, Trajectory};
use crate::tokens::{space_joined, TokenSeq};

/// Positive-only training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct U1Entry {
    pub task_id: String,
    #[serde(with = "space_joined")]
    pub x: TokenSeq,
    #[serde(with = "space_joined")]
    pub a_plus: TokenSeq,
}

/// Contrastive example: produce `a_plus` given `x` and the failed `a_minus`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct U2Entry {
    pub task_id: String,
    #[serde(with = "space_joined")]
    pub x: TokenSeq,
    #[serde(with = "space_joined")]
    pub a_plus: TokenSeq,
    #[serde(with = "space_joined")]
    pub a_minus: TokenSeq,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSets {
    pub u1: Vec<U1Entry>,
    pub u2: Vec<U2Entry>,
}

impl TrainingSets {
    pub fn is_empty(&self) -> bool {
        self.u1.is_empty() && self.u2.is_empty()
    }
}

/// Replaces reward ranking by a seeded random order (the `no_self_reward`
/// ablation).
pub fn shuffle_ranks(sets: &mut RankedSets, rng: &mut ChaCha8Rng) {
    sets.s_plus.shuffle(rng);
    sets.s_minus.shuffle(rng);
}

/// The top `min(n1, |S+|)` positives.
pub fn select_u1(sets: &RankedSets, n1: usize) -> Vec<&Trajectory> {
    sets.s_plus.iter().take(n1).collect()
}

/// Pairs `m = 1..=min(n2, |S+| - n1, |S-|)`: the positive at rank `m + u1_len`
/// with the negative at rank `m`. Empty whenever a bound is not positive.
pub fn select_u2(sets: &RankedSets, n1: usize, n2: usize, u1_len: usize) -> Vec<(&Trajectory, &Trajectory)> {
    let spare = sets.s_plus.len().saturating_sub(n1);
    let pairs = n2.min(spare).min(sets.s_minus.len());
    (1..=pairs)
        .filter_map(|m| Some((sets.s_plus.get(m + u1_len - 1)?, &sets.s_minus[m - 1])))
        .collect()
}
