//! Analysis views over a self-training run: exploratory ability and
//! stability of the solved-task sets, the probability margin between paired
//! positive and negative solutions, and the number of distinct correct
//! solutions held in the pool.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{PolicyError, PolicyModel};
use crate::store::CandidatePool;
use crate::tokens::{space_joined, TokenSeq};

pub const CSV_HEADER: &str = "iteration,held_in_rate,held_out_rate,exploratory_ability,stability,delta_logp,diversity";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Share of previously unsolved tasks that are solved now.
pub fn exploratory_ability(
    solved_now: &BTreeSet<String>,
    solved_before: &BTreeSet<String>,
    universe: &BTreeSet<String>,
) -> f64 {
    let gained = solved_now.difference(solved_before).count();
    let open = universe.difference(solved_before).count();
    gained as f64 / open.max(1) as f64
}

/// Share of the previous iteration's solved tasks still solved.
pub fn stability(solved_now: &BTreeSet<String>, solved_prev: &BTreeSet<String>) -> f64 {
    let kept = solved_now.intersection(solved_prev).count();
    kept as f64 / solved_prev.len().max(1) as f64
}

/// A fixed positive/negative pair for margin tracking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub task_id: String,
    #[serde(with = "space_joined")]
    pub x: TokenSeq,
    #[serde(with = "space_joined")]
    pub a_plus: TokenSeq,
    #[serde(with = "space_joined")]
    pub a_minus: TokenSeq,
}

/// Mean over pairs of `score(x -> a_plus) - score(x -> a_minus)` in nats per
/// token; `None` for no pairs.
pub fn delta_logp(model: &PolicyModel, pairs: &[ProbePair]) -> Result<Option<f64>, PolicyError> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let inf = model.inference();
    let mut total = 0.0;
    for p in pairs {
        let condition = model.encode_condition(&p.x)?;
        total += inf.score(&condition, &p.a_plus)? - inf.score(&condition, &p.a_minus)?;
    }
    Ok(Some(total / pairs.len() as f64))
}

/// Distinct `(task, a)` pairs with positive feedback.
pub fn diversity(pool: &CandidatePool) -> usize {
    pool.iter()
        .filter(|t| t.is_positive())
        .map(|t| (t.task_id.as_str(), &t.a))
        .collect::<BTreeSet<_>>()
        .len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub iteration: usize,
    pub held_in_rate: f64,
    pub held_out_rate: f64,
    pub exploratory_ability: f64,
    /// `None` when nothing was solved in the previous iteration.
    pub stability: Option<f64>,
    pub delta_logp: Option<f64>,
    pub diversity: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSeries {
    pub records: Vec<AnalysisRecord>,
}

/// `analysis_<method>_<seed>.<ext>`
pub fn analysis_file_name(method: &str, seed: u64, ext: &str) -> String {
    format!("analysis_{method}_{seed}.{ext}")
}

impl AnalysisSeries {
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let io = |source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io)?;
        let mut w = csv::Writer::from_writer(file);
        let fmt_opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let format_err = |e: csv::Error| MetricsError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        w.write_record(CSV_HEADER.split(',')).map_err(format_err)?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.held_in_rate.to_string(),
                r.held_out_rate.to_string(),
                r.exploratory_ability.to_string(),
                fmt_opt(r.stability),
                fmt_opt(r.delta_logp),
                r.diversity.to_string(),
            ])
            .map_err(format_err)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self, MetricsError> {
        let format_err = |message: String| MetricsError::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| format_err(e.to_string()))?;
        let header = r.headers().map_err(|e| format_err(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
        if header != CSV_HEADER {
            return Err(format_err(format!("unexpected header `{header}`")));
        }
        let mut records = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| format_err(e.to_string()))?;
            let num = |i: usize| -> Result<f64, MetricsError> {
                row[i].parse().map_err(|_| format_err(format!("bad number `{}`", &row[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>, MetricsError> {
                if row[i].is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            records.push(AnalysisRecord {
                iteration: num(0)? as usize,
                held_in_rate: num(1)?,
                held_out_rate: num(2)?,
                exploratory_ability: num(3)?,
                stability: opt(4)?,
                delta_logp: opt(5)?,
                diversity: num(6)? as usize,
            });
        }
        Ok(Self { records })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MetricsError> {
        let text = serde_json::to_string_pretty(self).expect("analysis serializes");
        std::fs::write(path, text + "\n").map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_json(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
