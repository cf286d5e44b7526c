//! Candidate trajectory pool: pairwise filtering of explored and refined
//! solutions, per-task deduplicated storage with a size cap, reward-ranked
//! positive/negative sets, and JSONL persistence.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::ExecStatus;
use crate::tokens::{space_joined, TokenSeq};

pub const DEFAULT_POOL_CAP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Explore,
    Refine,
    /// Witness solutions used to seed the pool before self-training.
    Seed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    #[serde(with = "space_joined")]
    pub x: TokenSeq,
    pub y: String,
    #[serde(with = "space_joined")]
    pub a: TokenSeq,
    pub b: u8,
    /// Self-reward: mean per-token log-probability under the generating policy.
    pub r: f64,
    pub source: Source,
    pub iteration: usize,
    pub status: ExecStatus,
}

impl Trajectory {
    pub fn is_positive(&self) -> bool {
        self.b == 1
    }

    pub fn check(&self) -> Result<(), StoreError> {
        if self.b > 1 || (self.b == 1 && self.status != ExecStatus::Ok) {
            return Err(StoreError::Contract(format!(
                "{}: feedback {} inconsistent with status {:?}",
                self.task_id, self.b, self.status
            )));
        }
        if !(self.r <= 0.0) {
            return Err(StoreError::Contract(format!("{}: reward {} is not a log-probability", self.task_id, self.r)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

/// Keeps the explored trajectory when it alone succeeded, or when both agree
/// on success and it has the strictly higher reward; otherwise the refined one.
pub fn filter_pair(t: Trajectory, t_refined: Trajectory) -> Result<Trajectory, StoreError> {
    if t.task_id != t_refined.task_id {
        return Err(StoreError::Contract(format!(
            "cannot pair trajectories of tasks {} and {}",
            t.task_id, t_refined.task_id
        )));
    }
    if t.source != Source::Explore || t_refined.source != Source::Refine {
        return Err(StoreError::Contract("filter_pair expects an explored and a refined trajectory".into()));
    }
    let keep_explored = (t.b == 1 && t_refined.b == 0) || (t.b == t_refined.b && t.r > t_refined.r);
    Ok(if keep_explored { t } else { t_refined })
}

/// Ranking order: reward descending, then later iteration, then `a`
/// lexicographically (token by token).
pub fn rank_order(l: &Trajectory, r: &Trajectory) -> Ordering {
    r.r.total_cmp(&l.r)
        .then_with(|| r.iteration.cmp(&l.iteration))
        .then_with(|| l.a.cmp(&r.a))
}

/// Eviction order: the first element is dropped first. Negatives go before
/// positives, lower reward before higher, older before newer.
fn eviction_order(l: &Trajectory, r: &Trajectory) -> Ordering {
    l.b.cmp(&r.b)
        .then_with(|| l.r.total_cmp(&r.r))
        .then_with(|| l.iteration.cmp(&r.iteration))
        .then_with(|| r.a.cmp(&l.a))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedSets {
    pub s_plus: Vec<Trajectory>,
    pub s_minus: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    cap: usize,
    tasks: BTreeMap<String, Vec<Trajectory>>,
    watermark: usize,
}

impl Default for CandidatePool {
    fn default() -> Self {
        Self::new(DEFAULT_POOL_CAP)
    }
}

impl CandidatePool {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            tasks: BTreeMap::new(),
            watermark: 0,
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Highest iteration among inserted trajectories.
    pub fn watermark(&self) -> usize {
        self.watermark
    }

    pub fn len(&self) -> usize {
        self.tasks.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }

    pub fn entries(&self, task_id: &str) -> &[Trajectory] {
        self.tasks.get(task_id).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.tasks.values().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Trajectory> {
        self.tasks.values_mut().flatten()
    }

    /// Inserts one trajectory. A duplicate `a` replaces the stored entry only
    /// when its reward is higher. Returns whether the stored entries changed.
    pub fn insert(&mut self, t: Trajectory) -> bool {
        self.watermark = self.watermark.max(t.iteration);
        let entries = self.tasks.entry(t.task_id.clone()).or_default();
        if let Some(old) = entries.iter_mut().find(|o| o.a == t.a) {
            if t.r > old.r {
                *old = t;
                return true;
            }
            return false;
        }
        let a = t.a.clone();
        entries.push(t);
        while entries.len() > self.cap {
            let victim = entries
                .iter()
                .enumerate()
                .min_by(|(_, l), (_, r)| eviction_order(l, r))
                .map(|(i, _)| i)
                .expect("over-full pool is non-empty");
            entries.remove(victim);
        }
        // An arrival evicted on the spot leaves the pool as it was.
        entries.iter().any(|e| e.a == a)
    }

    pub fn update(&mut self, filtered: impl IntoIterator<Item = Trajectory>) {
        for t in filtered {
            self.insert(t);
        }
    }

    /// Positives and negatives of one task, each in [`rank_order`].
    pub fn ranked_sets(&self, task_id: &str) -> RankedSets {
        let (mut s_plus, mut s_minus): (Vec<_>, Vec<_>) =
            self.entries(task_id).iter().cloned().partition(Trajectory::is_positive);
        s_plus.sort_by(rank_order);
        s_minus.sort_by(rank_order);
        RankedSets { s_plus, s_minus }
    }

    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for t in self.iter() {
            let line = serde_json::to_string(t).expect("trajectory serializes");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a pool written by [`persist`](Self::persist). Lines are
    /// re-inserted in order, so duplicate lines collapse.
    pub fn load(path: &Path, cap: usize) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut pool = Self::new(cap);
        for (i, line) in BufReader::new(File::open(path).map_err(io)?).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| StoreError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let t: Trajectory = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            t.check().map_err(|e| malformed(e.to_string()))?;
            pool.insert(t);
        }
        Ok(pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::split;

    fn traj(task: &str, a: &str, b: u8, r: f64, iteration: usize) -> Trajectory {
        Trajectory {
            task_id: task.into(),
            x: split("sum a b"),
            y: "3".into(),
            a: split(a),
            b,
            r,
            source: Source::Explore,
            iteration,
            status: if b == 1 { ExecStatus::Ok } else { ExecStatus::ParseError },
        }
    }

    #[test]
    fn duplicate_insert_is_idempotent() {
        let mut pool = CandidatePool::new(4);
        let t = traj("t", "a + b", 1, -0.5, 1);
        assert!(pool.insert(t.clone()));
        let snapshot = pool.clone();
        assert!(!pool.insert(t));
        assert_eq!(pool, snapshot);
    }

    #[test]
    fn duplicate_with_higher_reward_replaces() {
        let mut pool = CandidatePool::new(4);
        pool.insert(traj("t", "a + b", 1, -0.5, 1));
        pool.insert(traj("t", "a + b", 1, -0.2, 2));
        assert_eq!(pool.entries("t").len(), 1);
        assert_eq!(pool.entries("t")[0].r, -0.2);
    }

    #[test]
    fn cap_evicts_lowest_negative() {
        let mut pool = CandidatePool::new(2);
        pool.insert(traj("t", "a", 0, -1.0, 1));
        pool.insert(traj("t", "b", 0, -3.0, 1));
        pool.insert(traj("t", "c", 0, -2.0, 1));
        let kept: Vec<&str> = pool.entries("t").iter().map(|t| t.a[0].as_str()).collect();
        assert_eq!(kept, ["a", "c"]);
    }

    #[test]
    fn cap_prefers_positives() {
        let mut pool = CandidatePool::new(2);
        pool.insert(traj("t", "a", 1, -3.0, 1));
        pool.insert(traj("t", "b", 0, -0.1, 1));
        pool.insert(traj("t", "c", 1, -2.0, 1));
        assert!(pool.entries("t").iter().all(Trajectory::is_positive));
    }

    #[test]
    fn ranking_and_partition() {
        let mut pool = CandidatePool::new(8);
        pool.insert(traj("t", "x", 1, -0.7, 1));
        pool.insert(traj("t", "y", 1, -0.2, 1));
        pool.insert(traj("t", "z", 0, -0.1, 1));
        let sets = pool.ranked_sets("t");
        assert_eq!(sets.s_plus.iter().map(|t| t.r).collect::<Vec<_>>(), [-0.2, -0.7]);
        assert_eq!(sets.s_minus.len(), 1);
        assert_eq!(pool.ranked_sets("missing"), RankedSets::default());
    }

    #[test]
    fn ties_prefer_later_iteration_then_lexicographic() {
        let mut pool = CandidatePool::new(8);
        pool.insert(traj("t", "b", 1, -1.0, 1));
        pool.insert(traj("t", "a", 1, -1.0, 1));
        pool.insert(traj("t", "c", 1, -1.0, 2));
        let sets = pool.ranked_sets("t");
        let order: Vec<&str> = sets.s_plus.iter().map(|t| t.a[0].as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }

    #[test]
    fn filter_rejects_mismatched_tasks() {
        let t = traj("t1", "a", 1, -1.0, 1);
        let mut tr = traj("t2", "b", 0, -1.0, 1);
        tr.source = Source::Refine;
        assert!(matches!(filter_pair(t, tr), Err(StoreError::Contract(_))));
    }
}
