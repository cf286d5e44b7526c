use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::select::{TrainingSets, U2Entry};
use super::EngineError;
use crate::autodiff::{Tape, Var};
use crate::policy::{ParamVars, PolicyModel};

/// Optimisation settings shared by every training stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub clip: f64,
    pub batch_size: usize,
}

/// Summed losses over the final epoch, measured before each update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Term {
    L1,
    L2,
}

#[derive(Clone, Debug)]
struct Example {
    condition: Vec<usize>,
    target: Vec<usize>,
    term: Term,
}

fn examples(model: &PolicyModel, sets: &TrainingSets, use_pairs: bool) -> Result<Vec<Example>, EngineError> {
    let mut out = Vec::with_capacity(sets.u1.len() + sets.u2.len());
    for e in &sets.u1 {
        out.push(Example {
            condition: model.encode_condition(&e.x)?,
            target: model.encode_target(&e.a_plus)?,
            term: Term::L1,
        });
    }
    if use_pairs {
        for e in &sets.u2 {
            out.push(Example {
                condition: model.encode_refine_condition(&e.x, &e.a_minus)?.0,
                target: model.encode_target(&e.a_plus)?,
                term: Term::L2,
            });
        }
    }
    Ok(out)
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var, EngineError> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

fn finite(value: f64, what: &str, epoch: usize) -> Result<f64, EngineError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EngineError::NonFiniteLoss(format!("{what} became {value} in epoch {}", epoch + 1)))
    }
}

/// Minimises `L = L1 + L2`: negative log-likelihood of each positive after
/// its task input, plus (when `use_pairs`) of each pair's positive after the
/// task input and the paired negative. Minibatches draw from a seeded
/// shuffle every epoch.
pub fn train_iteration(
    model: &mut PolicyModel,
    sets: &TrainingSets,
    use_pairs: bool,
    params: &TrainParams,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport, EngineError> {
    let data = examples(model, sets, use_pairs)?;
    let mut report = LossReport::default();
    if data.is_empty() {
        return Ok(report);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..params.epochs {
        order.shuffle(rng);
        report = LossReport::default();
        for batch in order.chunks(params.batch_size.max(1)) {
            let mut tape = Tape::new();
            let vars = model.attach(&mut tape);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &data[i];
                let (loss, _) = model.nll(&mut tape, &vars, &ex.condition, &ex.target)?;
                let value = tape.value(loss).values()[0];
                match ex.term {
                    Term::L1 => report.l1 += value,
                    Term::L2 => report.l2 += value,
                }
                losses.push(loss);
            }
            let loss = sum_vars(&mut tape, &losses)?;
            finite(tape.value(loss).values()[0], "training loss", epoch)?;
            step(model, &mut tape, loss, &vars, params)?;
        }
        report.total = report.l1 + report.l2;
    }
    Ok(report)
}

fn step(model: &mut PolicyModel, tape: &mut Tape, loss: Var, vars: &ParamVars, params: &TrainParams) -> Result<(), EngineError> {
    let mut grads = tape.backward(loss)?;
    model.apply_gradients(&mut grads, vars, params.lr, params.clip)?;
    Ok(())
}

/// A preference pair with the frozen reference model's sequence
/// log-probabilities.
#[derive(Clone, Debug)]
pub struct DpoPair {
    pub condition: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl DpoPair {
    /// Encodes a pair conditioned on the task input alone and scores it
    /// under `reference`.
    pub fn new(reference: &PolicyModel, e: &U2Entry) -> Result<Self, EngineError> {
        let inf = reference.inference();
        let condition = reference.encode_condition(&e.x)?;
        let chosen = reference.encode_target(&e.a_plus)?;
        let rejected = reference.encode_target(&e.a_minus)?;
        let ref_chosen = inf.token_logps(&condition, &chosen).iter().sum();
        let ref_rejected = inf.token_logps(&condition, &rejected).iter().sum();
        Ok(Self {
            condition,
            chosen,
            rejected,
            ref_chosen,
            ref_rejected,
        })
    }
}

/// `-log sigmoid(beta * ((lp(chosen) - ref_chosen) - (lp(rejected) - ref_rejected)))`,
/// written as `softplus(beta * (nll(chosen) - nll(rejected) + ref_chosen - ref_rejected))`.
pub fn dpo_loss(
    model: &PolicyModel,
    tape: &mut Tape,
    vars: &ParamVars,
    pair: &DpoPair,
    beta: f64,
) -> Result<Var, EngineError> {
    let (nll_chosen, _) = model.nll(tape, vars, &pair.condition, &pair.chosen)?;
    let (nll_rejected, _) = model.nll(tape, vars, &pair.condition, &pair.rejected)?;
    let margin = tape.sub(nll_chosen, nll_rejected)?;
    let offset = tape.leaf(crate::autodiff::Tensor::scalar(pair.ref_chosen - pair.ref_rejected));
    let shifted = tape.add(margin, offset)?;
    let scaled = tape.scale(shifted, beta);
    Ok(tape.softplus(scaled))
}

/// Preference optimisation against a frozen reference. The reported loss
/// lands in the `l2` slot.
pub fn train_dpo(
    model: &mut PolicyModel,
    pairs: &[DpoPair],
    beta: f64,
    params: &TrainParams,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport, EngineError> {
    let mut report = LossReport::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..params.epochs {
        order.shuffle(rng);
        report = LossReport::default();
        for batch in order.chunks(params.batch_size.max(1)) {
            let mut tape = Tape::new();
            let vars = model.attach(&mut tape);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                losses.push(dpo_loss(model, &mut tape, &vars, &pairs[i], beta)?);
            }
            let loss = sum_vars(&mut tape, &losses)?;
            report.l2 += finite(tape.value(loss).values()[0], "DPO loss", epoch)?;
            step(model, &mut tape, loss, &vars, params)?;
        }
        report.total = report.l2;
    }
    Ok(report)
}
