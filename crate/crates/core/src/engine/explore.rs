use std::collections::BTreeSet;
use std::thread;

use rand_chacha::ChaCha8Rng;

use super::{stream, EngineError, Purpose, RunConfig};
use crate::env::{execute, EnvKind, TaskInstance};
use crate::policy::{GenerationParams, Inference, PolicyModel};
use crate::store::{Source, Trajectory};
use crate::tokens::TokenSeq;

/// One sampled candidate and, when refinement ran, its revision.
#[derive(Clone, Debug, PartialEq)]
pub struct Explored {
    pub explored: Trajectory,
    pub refined: Option<Trajectory>,
    /// The refinement context had to drop part of the candidate.
    pub truncated: bool,
}

impl Explored {
    pub fn solved(&self) -> bool {
        self.explored.is_positive() || self.refined.as_ref().is_some_and(Trajectory::is_positive)
    }
}

fn trajectory(
    env: EnvKind,
    task: &TaskInstance,
    a: TokenSeq,
    r: f64,
    source: Source,
    iteration: usize,
) -> Trajectory {
    let result = execute(env, task, &a);
    Trajectory {
        task_id: task.id.clone(),
        x: task.x.clone(),
        y: task.y.clone(),
        a,
        b: result.b,
        r,
        source,
        iteration,
        status: result.status,
    }
}

/// Samples `k_samples` candidates for one task, executes and scores each,
/// then (if `refine`) revises every non-empty candidate once. Refined
/// candidates are scored under the condition that produced them.
pub fn explore_task(
    inf: &Inference<'_>,
    env: EnvKind,
    task: &TaskInstance,
    params: &GenerationParams,
    refine: bool,
    iteration: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Explored>, EngineError> {
    let model = inf.model();
    let condition = model.encode_condition(&task.x)?;
    let once = GenerationParams { k_samples: 1, ..*params };
    let mut out = Vec::with_capacity(params.k_samples);
    for a in inf.sample(&condition, params, rng)? {
        let r = inf.score(&condition, &a)?;
        let explored = trajectory(env, task, a, r, Source::Explore, iteration);
        let (refined, truncated) = if refine && !explored.a.is_empty() {
            let out = inf.refine(&task.x, &explored.a, &once, rng)?;
            let (refine_condition, _) = model.encode_refine_condition(&task.x, &explored.a)?;
            let a = out.samples.into_iter().next().expect("one refinement requested");
            let r = inf.score(&refine_condition, &a)?;
            (Some(trajectory(env, task, a, r, Source::Refine, iteration)), out.truncated)
        } else {
            (None, false)
        };
        out.push(Explored {
            explored,
            refined,
            truncated,
        });
    }
    Ok(out)
}

/// Explores every task against a frozen snapshot of `model`. Each task
/// draws from its own random stream, so the result does not depend on the
/// number of workers.
pub fn explore_phase(
    model: &PolicyModel,
    tasks: &[&TaskInstance],
    config: &RunConfig,
    iteration: usize,
) -> Result<Vec<Explored>, EngineError> {
    let inf = model.inference();
    let params = GenerationParams {
        temperature: config.temperature,
        max_len: config.max_len(),
        k_samples: config.k,
    };
    let refine = config.refines();
    let run = |(index, task): (usize, &&TaskInstance)| {
        let mut rng = stream(config.seed, Purpose::Explore, iteration, index);
        explore_task(&inf, config.env, task, &params, refine, iteration, &mut rng)
    };
    let per_task: Vec<Result<Vec<Explored>, EngineError>> = if config.workers <= 1 {
        tasks.iter().enumerate().map(run).collect()
    } else {
        let chunk = tasks.len().div_ceil(config.workers).max(1);
        let indexed: Vec<(usize, &&TaskInstance)> = tasks.iter().enumerate().collect();
        thread::scope(|s| {
            let handles: Vec<_> = indexed
                .chunks(chunk)
                .map(|part| s.spawn(|| part.iter().copied().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("exploration worker panicked"))
                .collect()
        })
    };
    let mut out = Vec::new();
    for r in per_task {
        out.extend(r?);
    }
    Ok(out)
}

/// Ids of tasks with at least one successful candidate.
pub fn solved_ids(explored: &[Explored]) -> BTreeSet<String> {
    explored
        .iter()
        .filter(|e| e.solved())
        .map(|e| e.explored.task_id.clone())
        .collect()
}

/// Greedy evaluation outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub solved: BTreeSet<String>,
    pub total: usize,
}

impl EvalOutcome {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.solved.len() as f64 / self.total as f64
        }
    }
}

/// One greedy attempt per task; with `with_refine`, failed tasks get one
/// greedy refinement of the failed attempt.
pub fn evaluate(
    model: &PolicyModel,
    env: EnvKind,
    tasks: &[&TaskInstance],
    max_len: usize,
    with_refine: bool,
) -> Result<EvalOutcome, EngineError> {
    let inf = model.inference();
    let mut solved = BTreeSet::new();
    for task in tasks {
        let a = inf.greedy(&model.encode_condition(&task.x)?, max_len);
        let mut ok = execute(env, task, &a).solved();
        if !ok && with_refine {
            let (condition, _) = model.encode_refine_condition(&task.x, &a)?;
            ok = execute(env, task, &inf.greedy(&condition, max_len)).solved();
        }
        if ok {
            solved.insert(task.id.clone());
        }
    }
    Ok(EvalOutcome {
        solved,
        total: tasks.len(),
    })
}
