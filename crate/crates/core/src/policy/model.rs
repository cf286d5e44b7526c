use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{BOS, EOS, SEP};
use super::{GenerationParams, PolicyError, Vocab};
use crate::autodiff::{log_softmax, matmul_acc, sgd_step, sigmoid, Gradients, Tape, Tensor, Var};
use crate::tokens::TokenSeq;

/// Parameters are drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
pub const INIT_SCALE: f64 = 0.08;

/// Longest conditioning sequence; refinement drops the oldest tokens of the
/// previous attempt to fit.
pub const CONTEXT_BUDGET: usize = 256;

pub const PARAM_NAMES: [&str; 7] = ["embed", "w_ih", "b_ih", "w_hh", "b_hh", "w_out", "b_out"];

const EMBED: usize = 0;
const W_IH: usize = 1;
const B_IH: usize = 2;
const W_HH: usize = 3;
const B_HH: usize = 4;
const W_OUT: usize = 5;
const B_OUT: usize = 6;

/// Parameter tensors in [`PARAM_NAMES`] order. GRU gate columns are laid out
/// as `[reset | update | candidate]`.
pub type Params = [Tensor; 7];

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    vocab: Vocab,
    d_model: usize,
    hidden: usize,
    rng_seed: u64,
    params: Params,
}

fn param_shapes(v: usize, d: usize, h: usize) -> [(usize, usize); 7] {
    [(v, d), (d, 3 * h), (1, 3 * h), (h, 3 * h), (1, 3 * h), (h, v), (1, v)]
}

impl PolicyModel {
    pub fn new(vocab: Vocab, d_model: usize, hidden: usize, seed: u64) -> Result<Self, PolicyError> {
        if d_model == 0 || hidden == 0 {
            return Err(PolicyError::Precondition("model dimensions must be positive".into()));
        }
        let params = init_params(vocab.len(), d_model, hidden, seed);
        Ok(Self {
            vocab,
            d_model,
            hidden,
            rng_seed: seed,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, checking shapes and finiteness.
    pub fn from_parts(
        vocab: Vocab,
        d_model: usize,
        hidden: usize,
        rng_seed: u64,
        params: Params,
    ) -> Result<Self, PolicyError> {
        let shapes = param_shapes(vocab.len(), d_model, hidden);
        for ((p, (r, c)), name) in params.iter().zip(shapes).zip(PARAM_NAMES) {
            if p.shape() != [r, c] {
                return Err(PolicyError::Precondition(format!(
                    "parameter `{name}` has shape {:?}, expected [{r}, {c}]",
                    p.shape()
                )));
            }
            if !p.is_finite() {
                return Err(PolicyError::Precondition(format!("parameter `{name}` is not finite")));
            }
        }
        Ok(Self {
            vocab,
            d_model,
            hidden,
            rng_seed,
            params,
        })
    }

    /// Same architecture and vocabulary, parameters redrawn from `seed`.
    pub fn reinit(&self, seed: u64) -> Self {
        Self {
            vocab: self.vocab.clone(),
            d_model: self.d_model,
            hidden: self.hidden,
            rng_seed: seed,
            params: init_params(self.vocab.len(), self.d_model, self.hidden, seed),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// `<bos> x <sep>`
    pub fn encode_condition(&self, x: &[String]) -> Result<Vec<usize>, PolicyError> {
        if x.is_empty() {
            return Err(PolicyError::Precondition("task input is empty".into()));
        }
        let mut ids = vec![BOS];
        ids.extend(self.vocab.encode(x)?);
        ids.push(SEP);
        Ok(ids)
    }

    /// `<bos> x <sep> a_prev <sep>`, dropping leading tokens of `a_prev` when
    /// the whole does not fit [`CONTEXT_BUDGET`]. The flag reports truncation.
    pub fn encode_refine_condition(&self, x: &[String], a_prev: &[String]) -> Result<(Vec<usize>, bool), PolicyError> {
        let mut ids = self.encode_condition(x)?;
        let prev = self.vocab.encode(a_prev)?;
        let room = CONTEXT_BUDGET.saturating_sub(ids.len() + 1);
        let skip = prev.len().saturating_sub(room);
        ids.extend(&prev[skip..]);
        ids.push(SEP);
        Ok((ids, skip > 0))
    }

    /// Solution ids terminated by `<eos>`. Anything after an explicit `<eos>`
    /// (typically padding) is ignored.
    pub fn encode_target(&self, a: &[String]) -> Result<Vec<usize>, PolicyError> {
        let end = a.iter().position(|t| t == "<eos>").unwrap_or(a.len());
        let mut ids = self.vocab.encode(&a[..end])?;
        ids.push(EOS);
        Ok(ids)
    }

    /// Precomputes per-token input projections for fast decoding and scoring.
    pub fn inference(&self) -> Inference<'_> {
        let (v, d, h3) = (self.vocab.len(), self.d_model, 3 * self.hidden);
        let mut input_proj = vec![0.0; v * h3];
        matmul_acc(self.params[EMBED].values(), self.params[W_IH].values(), &mut input_proj, v, d, h3);
        let b_ih = self.params[B_IH].values();
        for row in input_proj.chunks_mut(h3) {
            for (o, b) in row.iter_mut().zip(b_ih) {
                *o += b;
            }
        }
        Inference {
            model: self,
            input_proj,
        }
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn attach(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(self.params.clone().map(|p| tape.leaf(p.with_grad())))
    }

    /// Summed negative log-likelihood of `target` (which must end in `<eos>`)
    /// after `condition`. Also returns per-token log-probabilities.
    pub fn nll(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        condition: &[usize],
        target: &[usize],
    ) -> Result<(Var, Vec<f64>), PolicyError> {
        if condition.is_empty() || target.is_empty() {
            return Err(PolicyError::Precondition("condition and target must be non-empty".into()));
        }
        let h = self.hidden;
        let p = &vars.0;
        let inputs: Vec<usize> = condition.iter().chain(&target[..target.len() - 1]).copied().collect();
        let len = inputs.len();

        let x = tape.embedding_lookup(p[EMBED], &inputs)?;
        let gi = tape.matmul(x, p[W_IH])?;
        let ones = tape.leaf(Tensor::new(vec![len, 1], vec![1.0; len])?);
        let bias = tape.matmul(ones, p[B_IH])?;
        let gi = tape.add(gi, bias)?;

        let mut state = tape.leaf(Tensor::zeros(1, h));
        let mut outputs = Vec::with_capacity(target.len());
        for t in 0..len {
            let gi_t = tape.slice_rows(gi, t, 1)?;
            let gh = tape.matmul(state, p[W_HH])?;
            let gh = tape.add(gh, p[B_HH])?;
            let r = {
                let (a, b) = (tape.slice_cols(gi_t, 0, h)?, tape.slice_cols(gh, 0, h)?);
                let s = tape.add(a, b)?;
                tape.sigmoid(s)
            };
            let z = {
                let (a, b) = (tape.slice_cols(gi_t, h, h)?, tape.slice_cols(gh, h, h)?);
                let s = tape.add(a, b)?;
                tape.sigmoid(s)
            };
            let n = {
                let (a, b) = (tape.slice_cols(gi_t, 2 * h, h)?, tape.slice_cols(gh, 2 * h, h)?);
                let gated = tape.mul(r, b)?;
                let s = tape.add(a, gated)?;
                tape.tanh(s)
            };
            let diff = tape.sub(state, n)?;
            let kept = tape.mul(z, diff)?;
            state = tape.add(n, kept)?;
            if t + 1 >= condition.len() {
                outputs.push(state);
            }
        }
        let hs = tape.concat_rows(&outputs)?;
        let logits = tape.matmul(hs, p[W_OUT])?;
        let ones = tape.leaf(Tensor::new(vec![outputs.len(), 1], vec![1.0; outputs.len()])?);
        let bias = tape.matmul(ones, p[B_OUT])?;
        let logits = tape.add(logits, bias)?;
        Ok(tape.log_softmax_nll(logits, target)?)
    }

    /// One clipped SGD step using the gradients of the attached parameters.
    /// Returns the gradient norm before clipping.
    pub fn apply_gradients(
        &mut self,
        grads: &mut Gradients,
        vars: &ParamVars,
        lr: f64,
        clip: f64,
    ) -> Result<f64, PolicyError> {
        let grads: Vec<Tensor> = vars
            .0
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
            .collect();
        Ok(sgd_step(&mut self.params, &grads, &PARAM_NAMES, lr, clip)?)
    }
}

fn init_params(v: usize, d: usize, h: usize, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    param_shapes(v, d, h).map(|(r, c)| {
        let values = (0..r * c).map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE)).collect();
        Tensor::new(vec![r, c], values).expect("shape matches value count")
    })
}

/// Tape handles for the parameters, in [`PARAM_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars(pub [Var; 7]);

/// Output of [`Inference::refine`].
#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub samples: Vec<TokenSeq>,
    pub truncated: bool,
}

/// Read-only decoding view over a model snapshot.
pub struct Inference<'m> {
    model: &'m PolicyModel,
    input_proj: Vec<f64>,
}

impl Inference<'_> {
    pub fn model(&self) -> &PolicyModel {
        self.model
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.model.hidden]
    }

    fn step(&self, state: &mut [f64], token: usize) {
        let h = self.model.hidden;
        let p = &self.model.params;
        let gi = &self.input_proj[token * 3 * h..(token + 1) * 3 * h];
        let mut gh = vec![0.0; 3 * h];
        matmul_acc(state, p[W_HH].values(), &mut gh, 1, h, 3 * h);
        for (g, b) in gh.iter_mut().zip(p[B_HH].values()) {
            *g += b;
        }
        for j in 0..h {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[h + j] + gh[h + j]);
            let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
            state[j] = n + z * (state[j] - n);
        }
    }

    fn logits(&self, state: &[f64]) -> Vec<f64> {
        let v = self.model.vocab.len();
        let p = &self.model.params;
        let mut out = vec![0.0; v];
        matmul_acc(state, p[W_OUT].values(), &mut out, 1, self.model.hidden, v);
        for (o, b) in out.iter_mut().zip(p[B_OUT].values()) {
            *o += b;
        }
        out
    }

    fn run(&self, ids: &[usize]) -> Vec<f64> {
        let mut state = self.initial_state();
        for &t in ids {
            self.step(&mut state, t);
        }
        state
    }

    /// Next-token log-distributions after each prefix of `ids`: one row per
    /// input token.
    pub fn next_token_logps(&self, ids: &[usize]) -> Vec<Vec<f64>> {
        let mut state = self.initial_state();
        ids.iter()
            .map(|&t| {
                self.step(&mut state, t);
                log_softmax(&self.logits(&state))
            })
            .collect()
    }

    /// Log-probability of each target token (the target ends in `<eos>`).
    pub fn token_logps(&self, condition: &[usize], target: &[usize]) -> Vec<f64> {
        let mut state = self.run(condition);
        let mut out = Vec::with_capacity(target.len());
        for (i, &t) in target.iter().enumerate() {
            out.push(log_softmax(&self.logits(&state))[t]);
            if i + 1 < target.len() {
                self.step(&mut state, t);
            }
        }
        out
    }

    /// Mean per-token log-probability of `a` and its `<eos>`, in nats.
    pub fn score(&self, condition: &[usize], a: &[String]) -> Result<f64, PolicyError> {
        let target = self.model.encode_target(a)?;
        self.score_ids(condition, &target)
    }

    /// As [`score`](Self::score) for an already encoded target.
    pub fn score_ids(&self, condition: &[usize], target: &[usize]) -> Result<f64, PolicyError> {
        if target.is_empty() {
            return Err(PolicyError::Precondition("cannot score an empty sequence".into()));
        }
        let logps = self.token_logps(condition, target);
        Ok(logps.iter().sum::<f64>() / logps.len() as f64)
    }

    /// Log-distribution used for decoding: control tokens other than `<eos>`
    /// can never be emitted.
    fn decode_logps(&self, state: &[f64], temperature: f64) -> Vec<f64> {
        let mut logits = self.logits(state);
        for (id, l) in logits.iter_mut().enumerate() {
            if Vocab::is_control(id) && id != EOS {
                *l = f64::NEG_INFINITY;
            } else {
                *l /= temperature;
            }
        }
        log_softmax(&logits)
    }

    fn decode(&self, condition: &[usize], max_len: usize, mut choose: impl FnMut(&[f64]) -> usize) -> TokenSeq {
        let mut state = self.run(condition);
        let mut out = Vec::new();
        while out.len() < max_len {
            let next = choose(&state);
            if next == EOS {
                break;
            }
            out.push(next);
            self.step(&mut state, next);
        }
        self.model.vocab.decode(&out)
    }

    /// Ancestral sampling of `k_samples` solutions.
    pub fn sample(&self, condition: &[usize], params: &GenerationParams, rng: &mut ChaCha8Rng) -> Result<Vec<TokenSeq>, PolicyError> {
        params.validate()?;
        Ok((0..params.k_samples)
            .map(|_| {
                self.decode(condition, params.max_len, |state| {
                    let probs: Vec<f64> = self.decode_logps(state, params.temperature).iter().map(|l| l.exp()).collect();
                    WeightedIndex::new(&probs).map_or(EOS, |w| w.sample(rng))
                })
            })
            .collect())
    }

    /// Samples revisions of `a_prev` for task input `x`.
    pub fn refine(
        &self,
        x: &[String],
        a_prev: &[String],
        params: &GenerationParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Refined, PolicyError> {
        if a_prev.is_empty() {
            return Err(PolicyError::Precondition("refinement needs a previous attempt".into()));
        }
        let (condition, truncated) = self.model.encode_refine_condition(x, a_prev)?;
        Ok(Refined {
            samples: self.sample(&condition, params, rng)?,
            truncated,
        })
    }

    /// Most likely token at every step; ties go to the lower id.
    pub fn greedy(&self, condition: &[usize], max_len: usize) -> TokenSeq {
        self.decode(condition, max_len, |state| {
            let logps = self.decode_logps(state, 1.0);
            let mut best = EOS;
            for (id, &l) in logps.iter().enumerate() {
                if l > logps[best] || (l == logps[best] && id < best) {
                    best = id;
                }
            }
            best
        })
    }
}
