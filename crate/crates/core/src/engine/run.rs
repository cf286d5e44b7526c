use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::explore::{evaluate, explore_phase, solved_ids, Explored};
use super::select::{select_u1, select_u2, shuffle_ranks, TrainingSets, U1Entry, U2Entry};
use super::train::{train_dpo, train_iteration, DpoPair, LossReport, TrainParams};
use super::{stream, EngineError, Method, Purpose, RunConfig, TrainMode};
use crate::env::{execute, Dataset, Split, TaskInstance};
use crate::metrics::{delta_logp, diversity, exploratory_ability, stability, AnalysisRecord, AnalysisSeries, ProbePair};
use crate::policy::{Checkpoint, PolicyModel, Vocab};
use crate::store::{filter_pair, CandidatePool, Source, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Tasks with a successful candidate this iteration (the warmup seed
    /// tasks for iteration 0).
    pub solved_task_ids: Vec<String>,
    /// Trajectories that entered or improved the pool.
    pub new_trajectory_count: usize,
    pub losses: LossReport,
    pub held_in_rate: f64,
    pub held_out_rate: f64,
    pub exploratory_ability: f64,
    pub stability: Option<f64>,
    pub delta_logp: Option<f64>,
    pub diversity: usize,
    pub pool_size: usize,
    pub u1_size: usize,
    pub u2_size: usize,
    pub truncated_refinements: usize,
}

impl IterationReport {
    pub fn summary_line(&self) -> String {
        format!(
            "iter={} held_in={} held_out={} new_traj={}",
            self.iteration, self.held_in_rate, self.held_out_rate, self.new_trajectory_count
        )
    }

    pub fn analysis_record(&self) -> AnalysisRecord {
        AnalysisRecord {
            iteration: self.iteration,
            held_in_rate: self.held_in_rate,
            held_out_rate: self.held_out_rate,
            exploratory_ability: self.exploratory_ability,
            stability: self.stability,
            delta_logp: self.delta_logp,
            diversity: self.diversity,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub reports: Vec<IterationReport>,
    pub model: PolicyModel,
    pub pool: CandidatePool,
    /// Training data of each iteration, starting with the warmup set.
    pub training_sets: Vec<TrainingSets>,
    pub probe: Vec<ProbePair>,
    pub checkpoint: Checkpoint,
}

impl RunOutput {
    pub fn analysis(&self) -> AnalysisSeries {
        AnalysisSeries {
            records: self.reports.iter().map(IterationReport::analysis_record).collect(),
        }
    }
}

pub fn run(config: &RunConfig, dataset: &Dataset) -> Result<RunOutput, EngineError> {
    run_with(config, dataset, |_| Ok(()))
}

pub fn run_star_env(config: &RunConfig, dataset: &Dataset) -> Result<RunOutput, EngineError> {
    require(config, Method::StarEnv)?;
    run(config, dataset)
}

pub fn run_sft_dpo(config: &RunConfig, dataset: &Dataset) -> Result<RunOutput, EngineError> {
    require(config, Method::SftDpo)?;
    run(config, dataset)
}

fn require(config: &RunConfig, method: Method) -> Result<(), EngineError> {
    if config.method == method {
        Ok(())
    } else {
        Err(EngineError::Config(format!("`method` is {}, expected {method}", config.method)))
    }
}

fn init_seed(config: &RunConfig, iteration: usize) -> u64 {
    stream(config.seed, Purpose::Init, iteration, 0).gen()
}

/// Runs warmup and every iteration, handing each report to `observe` as
/// soon as it exists.
pub fn run_with(
    config: &RunConfig,
    dataset: &Dataset,
    mut observe: impl FnMut(&IterationReport) -> Result<(), EngineError>,
) -> Result<RunOutput, EngineError> {
    config.validate()?;
    if let Some(t) = dataset.tasks.iter().find(|t| t.env != config.env) {
        return Err(EngineError::Dataset(format!("task {} belongs to {}, not {}", t.id, t.env, config.env)));
    }
    let held_in = dataset.split(Split::HeldIn);
    let held_out = dataset.split(Split::HeldOut);
    if held_in.len() < config.warmup_tasks || held_in.is_empty() {
        return Err(EngineError::Dataset(format!(
            "{} held-in tasks cannot cover {} warmup tasks",
            held_in.len(),
            config.warmup_tasks
        )));
    }
    let warmup: Vec<&TaskInstance> = held_in[..config.warmup_tasks].to_vec();
    let excluded: BTreeSet<String> = warmup.iter().map(|t| t.id.clone()).collect();
    let eval_in: Vec<&TaskInstance> = held_in.iter().copied().filter(|t| !excluded.contains(&t.id)).collect();
    let universe: BTreeSet<String> = held_in.iter().map(|t| t.id.clone()).collect();
    let max_len = config.max_len();
    let params = TrainParams {
        epochs: config.epochs_per_iter,
        lr: config.lr,
        clip: config.clip,
        batch_size: config.batch_size,
    };

    // Warmup: supervised training on witness solutions of the seed tasks.
    let mut warmup_sets = TrainingSets::default();
    for t in &warmup {
        let a = dataset
            .witnesses
            .get(&t.id)
            .ok_or_else(|| EngineError::Dataset(format!("warmup task {} has no witness", t.id)))?;
        warmup_sets.u1.push(U1Entry {
            task_id: t.id.clone(),
            x: t.x.clone(),
            a_plus: a.clone(),
        });
    }
    let mut model = PolicyModel::new(Vocab::standard(), config.d_model, config.hidden, init_seed(config, 0))?;
    let warmup_params = TrainParams {
        epochs: config.warmup_epochs(),
        ..params
    };
    let losses = train_iteration(
        &mut model,
        &warmup_sets,
        false,
        &warmup_params,
        &mut stream(config.seed, Purpose::Warmup, 0, 0),
    )?;

    let mut pool = CandidatePool::new(config.pool_cap);
    let mut new_count = 0;
    let mut solved_prev = BTreeSet::new();
    if config.seed_pool {
        let inf = model.inference();
        for (t, e) in warmup.iter().zip(&warmup_sets.u1) {
            let condition = model.encode_condition(&t.x)?;
            let result = execute(config.env, t, &e.a_plus);
            let seed = Trajectory {
                task_id: t.id.clone(),
                x: t.x.clone(),
                y: t.y.clone(),
                a: e.a_plus.clone(),
                b: result.b,
                r: inf.score(&condition, &e.a_plus)?,
                source: Source::Seed,
                iteration: 0,
                status: result.status,
            };
            if seed.is_positive() {
                solved_prev.insert(t.id.clone());
            }
            new_count += usize::from(pool.insert(seed));
        }
    }

    let evaluate_all = |model: &PolicyModel| -> Result<(f64, f64), EngineError> {
        let held_in_rate = evaluate(model, config.env, &eval_in, max_len, config.eval_refine)?.rate();
        let held_out_rate = evaluate(model, config.env, &held_out, max_len, config.eval_refine)?.rate();
        Ok((held_in_rate, held_out_rate))
    };

    let (held_in_rate, held_out_rate) = evaluate_all(&model)?;
    let report = IterationReport {
        iteration: 0,
        solved_task_ids: solved_prev.iter().cloned().collect(),
        new_trajectory_count: new_count,
        losses,
        held_in_rate,
        held_out_rate,
        exploratory_ability: exploratory_ability(&solved_prev, &BTreeSet::new(), &universe),
        stability: None,
        delta_logp: None,
        diversity: diversity(&pool),
        pool_size: pool.len(),
        u1_size: warmup_sets.u1.len(),
        u2_size: 0,
        truncated_refinements: 0,
    };
    observe(&report)?;
    let mut reports = vec![report];
    let mut training_sets = vec![warmup_sets];
    let mut solved_ever = solved_prev.clone();
    let mut probe: Vec<ProbePair> = Vec::new();

    for iteration in 1..=config.iterations {
        let explored = explore_phase(&model, &held_in, config, iteration)?;
        let solved_now = solved_ids(&explored);
        let truncated = explored.iter().filter(|e| e.truncated).count();
        let filtered = explored
            .into_iter()
            .map(|Explored { explored, refined, .. }| match refined {
                Some(refined) => filter_pair(explored, refined),
                None => Ok(explored),
            })
            .collect::<Result<Vec<_>, _>>()?;

        if config.has(super::Ablation::NoCandidatePool) {
            pool = CandidatePool::new(config.pool_cap);
        }
        new_count = filtered.into_iter().map(|t| usize::from(pool.insert(t))).sum();
        if config.rescore_pool {
            let inf = model.inference();
            for t in pool.iter_mut() {
                t.r = inf.score(&model.encode_condition(&t.x)?, &t.a)?;
            }
        }

        let sets = build_training_sets(config, &pool, iteration);
        if probe.is_empty() && iteration == 1 {
            probe = probe_pairs(&pool, config.probe_pairs);
        }

        let losses = if sets.is_empty() {
            LossReport::default()
        } else {
            let mut rng = stream(config.seed, Purpose::Train, iteration, 0);
            if config.train_mode == TrainMode::Scratch {
                model = model.reinit(init_seed(config, iteration));
            }
            match config.method {
                Method::Envisions | Method::StarEnv => {
                    train_iteration(&mut model, &sets, config.uses_pairs(), &params, &mut rng)?
                }
                Method::SftDpo => {
                    let sft = train_iteration(&mut model, &sets, false, &params, &mut rng)?;
                    let reference = model.clone();
                    let pairs = sets
                        .u2
                        .iter()
                        .map(|e| DpoPair::new(&reference, e))
                        .collect::<Result<Vec<_>, _>>()?;
                    let dpo = train_dpo(&mut model, &pairs, config.dpo_beta, &params, &mut rng)?;
                    LossReport {
                        l1: sft.l1,
                        l2: dpo.l2,
                        total: sft.l1 + dpo.l2,
                    }
                }
            }
        };

        let (held_in_rate, held_out_rate) = evaluate_all(&model)?;
        let report = IterationReport {
            iteration,
            solved_task_ids: solved_now.iter().cloned().collect(),
            new_trajectory_count: new_count,
            losses,
            held_in_rate,
            held_out_rate,
            exploratory_ability: exploratory_ability(&solved_now, &solved_ever, &universe),
            stability: (!solved_prev.is_empty()).then(|| stability(&solved_now, &solved_prev)),
            delta_logp: delta_logp(&model, &probe)?,
            diversity: diversity(&pool),
            pool_size: pool.len(),
            u1_size: sets.u1.len(),
            u2_size: sets.u2.len(),
            truncated_refinements: truncated,
        };
        observe(&report)?;
        reports.push(report);
        training_sets.push(sets);
        solved_ever.extend(solved_now.iter().cloned());
        solved_prev = solved_now;
    }

    let checkpoint = Checkpoint {
        model: model.clone(),
        rng: stream(config.seed, Purpose::Checkpoint, config.iterations + 1, 0),
        excluded_task_ids: excluded.into_iter().collect(),
        max_len: config.max_len,
    };
    Ok(RunOutput {
        reports,
        model,
        pool,
        training_sets,
        probe,
        checkpoint,
    })
}

/// Per-task U1/U2 selection over the pool, in task-id order.
fn build_training_sets(config: &RunConfig, pool: &CandidatePool, iteration: usize) -> TrainingSets {
    let mut rng = stream(config.seed, Purpose::Select, iteration, 0);
    let mut sets = TrainingSets::default();
    for task_id in pool.task_ids() {
        let mut ranked = pool.ranked_sets(task_id);
        if config.has(super::Ablation::NoSelfReward) {
            shuffle_ranks(&mut ranked, &mut rng);
        }
        let u1 = select_u1(&ranked, config.n1);
        sets.u1.extend(u1.iter().map(|t| U1Entry {
            task_id: t.task_id.clone(),
            x: t.x.clone(),
            a_plus: t.a.clone(),
        }));
        if config.uses_pairs() {
            sets.u2.extend(select_u2(&ranked, config.n1, config.n2, u1.len()).into_iter().map(|(p, n)| U2Entry {
                task_id: p.task_id.clone(),
                x: p.x.clone(),
                a_plus: p.a.clone(),
                a_minus: n.a.clone(),
            }));
        }
    }
    sets
}

/// The best positive and best negative of up to `limit` tasks holding both.
fn probe_pairs(pool: &CandidatePool, limit: usize) -> Vec<ProbePair> {
    pool.task_ids()
        .filter_map(|id| {
            let sets = pool.ranked_sets(id);
            let (p, n) = (sets.s_plus.first()?, sets.s_minus.first()?);
            Some(ProbePair {
                task_id: id.to_string(),
                x: p.x.clone(),
                a_plus: p.a.clone(),
                a_minus: n.a.clone(),
            })
        })
        .take(limit)
        .collect()
}
