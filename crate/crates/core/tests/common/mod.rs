#![allow(dead_code)]

pub mod oracles;

use envisions_core::autodiff::{Tape, Tensor, Var};
use envisions_core::policy::{ParamVars, PolicyModel, Vocab};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Max relative error between tape gradients and central finite differences
/// of the scalar produced by `build`, over every element of every input.
pub fn max_fd_error<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |ts: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item().expect("scalar output")
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).expect("backward");

    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let g = grads.get(*var).expect("grad for leaf");
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].values_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].values_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.values()[j], numeric));
        }
    }
    worst
}

/// Four control tokens plus twelve symbols: V = 16.
pub fn tiny_vocab() -> Vocab {
    let mut tokens: Vec<String> = ["<pad>", "<bos>", "<eos>", "<sep>"].iter().map(|s| s.to_string()).collect();
    tokens.extend("0123456789".chars().map(String::from));
    tokens.extend(["+".to_string(), "-".to_string()]);
    Vocab::from_tokens(tokens).expect("valid vocabulary")
}

/// d = 8, h = 12 model over [`tiny_vocab`], parameters spread by `spread`
/// so the nonlinearities leave their linear range.
pub fn tiny_model(seed: u64, spread: f64) -> PolicyModel {
    let mut m = PolicyModel::new(tiny_vocab(), 8, 12, seed).expect("model");
    for p in m.params_mut() {
        for v in p.values_mut() {
            *v *= spread;
        }
    }
    m
}

pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(String::from).collect()
}

/// Max relative error between the tape gradient of every model parameter
/// and central finite differences of the scalar loss built by `build`.
pub fn model_fd_error<F>(model: &PolicyModel, build: F) -> f64
where
    F: Fn(&PolicyModel, &mut Tape, &ParamVars) -> Var,
{
    let eval = |m: &PolicyModel| -> f64 {
        let mut tape = Tape::new();
        let vars = m.attach(&mut tape);
        let out = build(m, &mut tape, &vars);
        tape.value(out).item().expect("scalar loss")
    };
    let mut tape = Tape::new();
    let vars = model.attach(&mut tape);
    let out = build(model, &mut tape, &vars);
    let grads = tape.backward(out).expect("backward");

    let mut worst: f64 = 0.0;
    for (i, var) in vars.0.iter().enumerate() {
        let zeros = Tensor::zeros(model.params()[i].rows(), model.params()[i].cols());
        let g = grads.get(*var).unwrap_or(&zeros).clone();
        for j in 0..model.params()[i].len() {
            let mut plus = model.clone();
            plus.params_mut()[i].values_mut()[j] += FD_STEP;
            let mut minus = model.clone();
            minus.params_mut()[i].values_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.values()[j], numeric));
        }
    }
    worst
}
