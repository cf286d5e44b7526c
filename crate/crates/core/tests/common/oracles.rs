//! Independent reference implementations. Each check returns a short
//! description of the first disagreement, if any.

use std::collections::{BTreeSet, HashMap};

use envisions_core::autodiff::Tape;
use envisions_core::engine::{select_u1, select_u2};
use envisions_core::env::expr::{evaluate, parse_expr, EvalError};
use envisions_core::env::logic::{fixpoint, parse_program, Atom, Term};
use envisions_core::env::{execute, EnvKind, ExecStatus, Split, TaskInstance};
use envisions_core::store::{filter_pair, RankedSets, Source, Trajectory};
use envisions_core::tokens::split;
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tiny_model;

// ---------------------------------------------------------------- filter

/// `(b, b_refined, sign(r - r_refined))` and whether the explored
/// trajectory survives.
pub const FILTER_TABLE: [((u8, u8, i8), bool); 12] = [
    ((0, 0, -1), false),
    ((0, 0, 0), false),
    ((0, 0, 1), true),
    ((0, 1, -1), false),
    ((0, 1, 0), false),
    ((0, 1, 1), false),
    ((1, 0, -1), true),
    ((1, 0, 0), true),
    ((1, 0, 1), true),
    ((1, 1, -1), false),
    ((1, 1, 0), false),
    ((1, 1, 1), true),
];

pub fn trajectory(task: &str, a: &str, b: u8, r: f64, iteration: usize, source: Source) -> Trajectory {
    Trajectory {
        task_id: task.into(),
        x: split("sum 1 2"),
        y: "3".into(),
        a: split(a),
        b,
        r,
        source,
        iteration,
        status: if b == 1 { ExecStatus::Ok } else { ExecStatus::RuntimeError },
    }
}

/// Number of agreeing cells.
pub fn filter_truth_table() -> Result<usize, String> {
    for ((b, b_ref, sign), keep_explored) in FILTER_TABLE {
        let r_ref = -1.0;
        let r = r_ref + 0.25 * f64::from(sign);
        let t = trajectory("t", "1 + 2", b, r, 1, Source::Explore);
        let t_ref = trajectory("t", "2 + 1", b_ref, r_ref, 1, Source::Refine);
        let kept = filter_pair(t.clone(), t_ref.clone()).map_err(|e| e.to_string())?;
        let expected = if keep_explored { t } else { t_ref };
        if kept != expected {
            return Err(format!("cell b={b} b~={b_ref} sign={sign}"));
        }
    }
    Ok(FILTER_TABLE.len())
}

// ---------------------------------------------------------------- score

const SYMBOLS: [&str; 12] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-"];

pub fn random_tokens(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<String> {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| SYMBOLS[rng.gen_range(0..SYMBOLS.len())].to_string()).collect()
}

/// Compares `score` with the tape loss on `pairs` random (condition, a)
/// pairs; returns the largest absolute difference.
pub fn score_consistency(pairs: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let per_model = 20;
    for i in 0..pairs {
        let model = tiny_model(seed + (i / per_model) as u64, 6.0);
        let inf = model.inference();
        let x = random_tokens(&mut rng, 1, 6);
        let a = random_tokens(&mut rng, 0, 8);
        let condition = if rng.gen_bool(0.5) {
            model.encode_condition(&x).map_err(|e| e.to_string())?
        } else {
            model
                .encode_refine_condition(&x, &random_tokens(&mut rng, 0, 5))
                .map_err(|e| e.to_string())?
                .0
        };
        let target = model.encode_target(&a).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let vars = model.attach(&mut tape);
        let (nll, logps) = model.nll(&mut tape, &vars, &condition, &target).map_err(|e| e.to_string())?;
        let oracle = -tape.value(nll).item().expect("scalar") / target.len() as f64;
        let score = inf.score(&condition, &a).map_err(|e| e.to_string())?;
        worst = worst.max((score - oracle).abs());
        for (fast, taped) in inf.token_logps(&condition, &target).iter().zip(&logps) {
            worst = worst.max((fast - taped).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------- selection

pub fn random_ranked(rng: &mut ChaCha8Rng) -> RankedSets {
    let t = |i: usize, b: u8| {
        let a = format!("{}{i}", if b == 1 { "p" } else { "n" });
        trajectory("t", &a, b, -(i as f64), 1, Source::Explore)
    };
    RankedSets {
        s_plus: (0..rng.gen_range(0..16)).map(|i| t(i, 1)).collect(),
        s_minus: (0..rng.gen_range(0..8)).map(|i| t(i, 0)).collect(),
    }
}

/// Checks U1/U2 on `pools` random ranked sets against sort, slice and pair;
/// returns how many produced a non-empty U2.
pub fn selection_agreement(pools: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nonempty_u2 = 0;
    for case in 0..pools {
        let sets = random_ranked(&mut rng);
        let n1 = rng.gen_range(0..12);
        let n2 = rng.gen_range(0..4);

        let mut sorted_plus = sets.s_plus.clone();
        sorted_plus.sort_by(|a, b| b.r.total_cmp(&a.r));
        let expected_u1: Vec<Trajectory> = sorted_plus.iter().take(n1).cloned().collect();

        let bound = (n2 as i64).min(sets.s_plus.len() as i64 - n1 as i64).min(sets.s_minus.len() as i64);
        let mut expected_u2 = Vec::new();
        let mut m = 1i64;
        while m <= bound {
            let pos = m as usize + expected_u1.len();
            expected_u2.push((sorted_plus[pos - 1].clone(), sets.s_minus[m as usize - 1].clone()));
            m += 1;
        }

        let u1: Vec<Trajectory> = select_u1(&sets, n1).into_iter().cloned().collect();
        let u2: Vec<(Trajectory, Trajectory)> = select_u2(&sets, n1, n2, u1.len())
            .into_iter()
            .map(|(p, n)| (p.clone(), n.clone()))
            .collect();
        if u1 != expected_u1 || u2 != expected_u2 {
            return Err(format!(
                "pool {case}: |S+|={} |S-|={} N1={n1} N2={n2}",
                sets.s_plus.len(),
                sets.s_minus.len()
            ));
        }
        nonempty_u2 += usize::from(!u2.is_empty());
    }
    Ok(nonempty_u2)
}

// ---------------------------------------------------------------- expressions

enum Node {
    Int(i64),
    Var(&'static str),
    Bin(char, Box<Node>, Box<Node>),
}

const VARS: [(&str, i64); 4] = [("a", 7), ("b", -3), ("c", 12), ("d", 1_000_000_007)];

fn random_node(rng: &mut ChaCha8Rng, depth: u32) -> Node {
    if depth == 0 || rng.gen_bool(0.3) {
        if rng.gen_bool(0.5) {
            let magnitude = if rng.gen_bool(0.1) { 4_000_000_000_000 } else { 30 };
            Node::Int(rng.gen_range(0..magnitude))
        } else {
            Node::Var(VARS[rng.gen_range(0..VARS.len())].0)
        }
    } else {
        let op = ['+', '-', '*', '/', '%'][rng.gen_range(0..5)];
        Node::Bin(
            op,
            Box::new(random_node(rng, depth - 1)),
            Box::new(random_node(rng, depth - 1)),
        )
    }
}

/// Fully parenthesised source, with optional redundant whitespace.
fn render(n: &Node, rng: &mut ChaCha8Rng) -> String {
    let pad = if rng.gen_bool(0.3) { " " } else { "" };
    match n {
        Node::Int(v) => v.to_string(),
        Node::Var(name) => name.to_string(),
        Node::Bin(op, l, r) => format!("({}{pad}{op}{pad}{})", render(l, rng), render(r, rng)),
    }
}

#[derive(Debug, PartialEq)]
enum Oracle {
    Value(BigInt),
    Overflow,
    DivZero,
    Inexact,
}

fn big_eval(n: &Node) -> Oracle {
    let fits = |v: &BigInt| *v >= BigInt::from(i64::MIN) && *v <= BigInt::from(i64::MAX);
    match n {
        Node::Int(v) => Oracle::Value(BigInt::from(*v)),
        Node::Var(name) => Oracle::Value(BigInt::from(VARS.iter().find(|(n, _)| n == name).unwrap().1)),
        Node::Bin(op, l, r) => {
            let a = match big_eval(l) {
                Oracle::Value(v) => v,
                other => return other,
            };
            let b = match big_eval(r) {
                Oracle::Value(v) => v,
                other => return other,
            };
            let zero = BigInt::from(0);
            let v = match op {
                '+' => &a + &b,
                '-' => &a - &b,
                '*' => &a * &b,
                '/' | '%' if b == zero => return Oracle::DivZero,
                '/' => {
                    if &a % &b != zero {
                        return Oracle::Inexact;
                    }
                    &a / &b
                }
                _ => &a % &b,
            };
            if fits(&v) {
                Oracle::Value(v)
            } else {
                Oracle::Overflow
            }
        }
    }
}

/// Evaluates `cases` random trees with the evaluator and a big-integer
/// oracle; returns how many produced a value.
pub fn expression_agreement(cases: usize, seed: u64) -> Result<usize, String> {
    let bindings: HashMap<String, i64> = VARS.iter().map(|(n, v)| (n.to_string(), *v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = 0;
    for case in 0..cases {
        let tree = random_node(&mut rng, 4);
        let src = render(&tree, &mut rng);
        let parsed = parse_expr(&src).map_err(|e| format!("case {case}: {src}: {e}"))?;
        match (big_eval(&tree), evaluate(&parsed, &bindings)) {
            (Oracle::Value(want), Ok(v)) if BigInt::from(v) == want => values += 1,
            (Oracle::Overflow, Err(EvalError::Overflow))
            | (Oracle::DivZero, Err(EvalError::DivisionByZero))
            | (Oracle::Inexact, Err(EvalError::InexactDivision(..))) => {}
            (want, got) => return Err(format!("case {case}: {src}: oracle {want:?}, evaluator {got:?}")),
        }
    }
    Ok(values)
}

// ---------------------------------------------------------------- logic

const PREDS: [(&str, usize); 5] = [("p", 1), ("q", 1), ("r", 2), ("s", 1), ("t", 2)];
const LOGIC_VARS: [&str; 3] = ["X", "Y", "Z"];

fn random_program(rng: &mut ChaCha8Rng) -> (String, Vec<String>) {
    let n_consts = rng.gen_range(1..=8);
    let consts: Vec<String> = (0..n_consts).map(|i| format!("k{i}")).collect();
    let mut src = String::new();
    for _ in 0..rng.gen_range(0..10) {
        let (p, arity) = PREDS[rng.gen_range(0..PREDS.len())];
        let args: Vec<&str> = (0..arity).map(|_| consts[rng.gen_range(0..n_consts)].as_str()).collect();
        src += &format!("fact {p}({}). ", args.join(","));
    }
    for _ in 0..rng.gen_range(0..=10) {
        let mut body = Vec::new();
        let mut body_vars = BTreeSet::new();
        for _ in 0..rng.gen_range(1..=3) {
            let (p, arity) = PREDS[rng.gen_range(0..PREDS.len())];
            let args: Vec<String> = (0..arity)
                .map(|_| {
                    if rng.gen_bool(0.8) {
                        let v = LOGIC_VARS[rng.gen_range(0..LOGIC_VARS.len())];
                        body_vars.insert(v);
                        v.to_string()
                    } else {
                        consts[rng.gen_range(0..n_consts)].clone()
                    }
                })
                .collect();
            body.push(format!("{p}({})", args.join(",")));
        }
        let vars: Vec<&str> = body_vars.into_iter().collect();
        let (hp, harity) = PREDS[rng.gen_range(0..PREDS.len())];
        let hargs: Vec<String> = (0..harity)
            .map(|_| {
                if vars.is_empty() || rng.gen_bool(0.1) {
                    consts[rng.gen_range(0..n_consts)].clone()
                } else {
                    vars[rng.gen_range(0..vars.len())].to_string()
                }
            })
            .collect();
        src += &format!("rule {hp}({}) :- {}. ", hargs.join(","), body.join(", "));
    }
    (src, consts)
}

/// Naive closure: try every assignment of constants to variables for every
/// rule until nothing changes.
fn brute_force_closure(src: &str, consts: &[String]) -> BTreeSet<(String, Vec<String>)> {
    let program = parse_program(src).unwrap();
    let as_fact = |atom: &Atom, env: &HashMap<String, String>| {
        let args = atom
            .args
            .iter()
            .map(|t| match t {
                Term::Const(c) => c.clone(),
                Term::Var(v) => env[v].clone(),
            })
            .collect::<Vec<_>>();
        (atom.pred.clone(), args)
    };
    let empty = HashMap::new();
    let mut known: BTreeSet<_> = program.facts.iter().map(|f| as_fact(f, &empty)).collect();
    loop {
        let mut added = false;
        for rule in &program.rules {
            let n = consts.len();
            let total = n.pow(LOGIC_VARS.len() as u32);
            for code in 0..total {
                let mut env = HashMap::new();
                let mut c = code;
                for v in LOGIC_VARS {
                    env.insert(v.to_string(), consts[c % n].clone());
                    c /= n;
                }
                if rule.body.iter().all(|b| known.contains(&as_fact(b, &env))) {
                    added |= known.insert(as_fact(&rule.head, &env));
                }
            }
        }
        if !added {
            return known;
        }
    }
}

/// Runs `cases` random programs through the engine and the naive closure;
/// returns how many derived at least one new fact.
pub fn logic_agreement(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nontrivial = 0;
    for case in 0..cases {
        let (src, consts) = random_program(&mut rng);
        let program = parse_program(&src).map_err(|e| format!("case {case}: {e}"))?;
        let engine = fixpoint(&program).map_err(|e| format!("case {case}: {e}"))?;
        let oracle = brute_force_closure(&src, &consts);
        if engine != oracle {
            return Err(format!("case {case}: {src}"));
        }
        nontrivial += usize::from(oracle.len() > program.facts.len());
    }
    Ok(nontrivial)
}

// ---------------------------------------------------------------- grid

/// Reference walker over a character map.
pub fn reference_walk(w: usize, h: usize, start: (usize, usize), walls: &[(usize, usize)], moves: &str) -> (usize, usize) {
    let mut map = vec![vec!['.'; w]; h];
    for &(r, c) in walls {
        map[r][c] = '#';
    }
    let (mut r, mut c) = (start.0 as isize, start.1 as isize);
    for m in moves.split_whitespace() {
        let (nr, nc) = match m {
            "U" => (r - 1, c),
            "D" => (r + 1, c),
            "L" => (r, c - 1),
            "R" => (r, c + 1),
            _ => unreachable!(),
        };
        let inside = nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w;
        if inside && map[nr as usize][nc as usize] == '.' {
            r = nr;
            c = nc;
        }
    }
    (r as usize, c as usize)
}

/// Replays `cases` random action sequences in the simulator and the
/// reference walker.
pub fn grid_agreement(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let (w, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let start = (rng.gen_range(0..h), rng.gen_range(0..w));
        let walls: Vec<(usize, usize)> = (0..rng.gen_range(0..=w * h / 3))
            .map(|_| (rng.gen_range(0..h), rng.gen_range(0..w)))
            .filter(|&cell| cell != start)
            .collect();
        let moves: Vec<&str> = (0..rng.gen_range(0..30)).map(|_| ["U", "D", "L", "R"][rng.gen_range(0..4)]).collect();
        let moves = moves.join(" ");
        let want = reference_walk(w, h, start, &walls, &moves);

        let mut x = format!("grid {w} {h} start {} {} goal {} {}", start.0, start.1, want.0, want.1);
        for (r, c) in &walls {
            x += &format!(" wall {r} {c}");
        }
        let task = TaskInstance {
            id: format!("g{case}"),
            x: split(&x),
            y: format!("{} {}", want.0, want.1),
            split: Split::HeldIn,
            env: EnvKind::GridAgent,
        };
        let r = execute(EnvKind::GridAgent, &task, &split(&moves));
        if r.b != 1 || r.output != Some(format!("{} {}", want.0, want.1)) {
            return Err(format!("case {case}: {x} / {moves} -> {r:?}"));
        }
    }
    Ok(())
}
