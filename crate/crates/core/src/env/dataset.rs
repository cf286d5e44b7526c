//! Seeded synthetic task generation and JSONL persistence.
//!
//! Held-out tasks come from a shifted distribution: larger operands for
//! expressions, longer rule chains for logic programs and larger boards for
//! the grid agent. Every task is generated together with a witness solution
//! that is known to execute correctly.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expr::{self, BinOp, Expr};
use super::grid::{cell_string, Grid};
use super::logic::{self, Atom, Program, Rule, Term};
use super::{EnvError, EnvKind, Split, TaskInstance};
use crate::tokens::{space_joined, TokenSeq};

pub const EXPR_HELD_IN_OPERANDS: RangeInclusive<i64> = 1..=9;
pub const EXPR_HELD_OUT_OPERANDS: RangeInclusive<i64> = 10..=99;
const EXPR_IDENTIFIERS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
const EXPR_WORDS: [(&str, BinOp); 3] = [
    ("sum", BinOp::Add),
    ("difference", BinOp::Sub),
    ("product", BinOp::Mul),
];

pub const LOGIC_HELD_IN_RULES: RangeInclusive<usize> = 1..=2;
pub const LOGIC_HELD_OUT_RULES: RangeInclusive<usize> = 3..=4;
const LOGIC_PREDICATES: [&str; 6] = ["p", "q", "r", "s", "t", "u"];
const LOGIC_CONSTANTS: [&str; 5] = ["a", "b", "c", "d", "e"];

pub const GRID_HELD_IN_SIZES: RangeInclusive<usize> = 3..=5;
pub const GRID_HELD_OUT_SIZES: RangeInclusive<usize> = 6..=8;

/// Tasks of one split plus the witness solution for each task id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub tasks: Vec<TaskInstance>,
    pub witnesses: BTreeMap<String, TokenSeq>,
}

impl Dataset {
    pub fn extend(&mut self, other: Dataset) {
        self.tasks.extend(other.tasks);
        self.witnesses.extend(other.witnesses);
    }

    pub fn split(&self, split: Split) -> Vec<&TaskInstance> {
        self.tasks.iter().filter(|t| t.split == split).collect()
    }
}

fn split_stream(env: EnvKind, split: Split) -> u64 {
    let e = EnvKind::ALL.iter().position(|k| *k == env).unwrap_or(0) as u64;
    let s = match split {
        Split::HeldIn => 0,
        Split::HeldOut => 1,
    };
    e * 2 + s
}

/// Generates `n` tasks of one split, deterministically from `seed`.
pub fn generate_dataset(env: EnvKind, n: usize, seed: u64, split: Split) -> Result<Dataset, EnvError> {
    if n == 0 {
        return Err(EnvError::Invalid("dataset size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split_stream(env, split));
    let mut out = Dataset::default();
    for i in 0..n {
        let (x, y, witness) = match env {
            EnvKind::ExprMath => expr_task(&mut rng, split),
            EnvKind::LogicRules => logic_task(&mut rng, split),
            EnvKind::GridAgent => grid_task(&mut rng, split),
        };
        let id = format!("{}-{}-{i:04}", env.name(), split.name());
        out.witnesses.insert(id.clone(), witness);
        out.tasks.push(TaskInstance { id, x, y, split, env });
    }
    Ok(out)
}

fn digits(v: i64) -> Vec<String> {
    v.to_string().chars().map(String::from).collect()
}

fn expr_task(rng: &mut ChaCha8Rng, split: Split) -> (TokenSeq, String, TokenSeq) {
    let range = match split {
        Split::HeldIn => EXPR_HELD_IN_OPERANDS,
        Split::HeldOut => EXPR_HELD_OUT_OPERANDS,
    };
    let n_ops = if rng.gen_bool(0.3) { 1 } else { 2 };
    let names: Vec<&str> = EXPR_IDENTIFIERS.choose_multiple(rng, n_ops + 1).copied().collect();
    let var = |i: usize| Expr::Var(names[i].to_string());
    let (w1, op1) = *EXPR_WORDS.choose(rng).expect("non-empty");
    let mut question = vec![w1.to_string()];
    let tree = if n_ops == 1 {
        question.extend([names[0].to_string(), names[1].to_string()]);
        Expr::Bin(op1, Box::new(var(0)), Box::new(var(1)))
    } else {
        let (w2, op2) = *EXPR_WORDS.choose(rng).expect("non-empty");
        if rng.gen_bool(0.5) {
            question.extend([names[0], w2, names[1], names[2]].map(String::from));
            let inner = Expr::Bin(op2, Box::new(var(1)), Box::new(var(2)));
            Expr::Bin(op1, Box::new(var(0)), Box::new(inner))
        } else {
            question.extend([w2, names[0], names[1], names[2]].map(String::from));
            let inner = Expr::Bin(op2, Box::new(var(0)), Box::new(var(1)));
            Expr::Bin(op1, Box::new(inner), Box::new(var(2)))
        }
    };

    let mut bound: Vec<(&str, i64)> = names.iter().map(|n| (*n, rng.gen_range(range.clone()))).collect();
    bound.shuffle(rng);
    let mut x = Vec::new();
    for (i, (name, value)) in bound.iter().enumerate() {
        x.push(name.to_string());
        x.push("=".into());
        x.extend(digits(*value));
        x.push(if i + 1 == bound.len() { ";" } else { "," }.into());
    }
    x.extend(question);

    let env: std::collections::HashMap<String, i64> =
        bound.iter().map(|(n, v)| (n.to_string(), *v)).collect();
    let y = expr::evaluate(&tree, &env).expect("generated expressions evaluate");
    let witness = expr::render_infix(&tree).chars().map(String::from).collect();
    (x, y.to_string(), witness)
}

fn logic_task(rng: &mut ChaCha8Rng, split: Split) -> (TokenSeq, String, TokenSeq) {
    let (n_consts, rules_range) = match split {
        Split::HeldIn => (rng.gen_range(2..=3), LOGIC_HELD_IN_RULES),
        Split::HeldOut => (rng.gen_range(3..=5), LOGIC_HELD_OUT_RULES),
    };
    let n_rules = rng.gen_range(rules_range);
    let mut preds: Vec<&str> = LOGIC_PREDICATES.to_vec();
    preds.shuffle(rng);
    let preds = &preds[..2 + n_rules];
    let consts: Vec<&str> = LOGIC_CONSTANTS.choose_multiple(rng, n_consts).copied().collect();

    let mut facts: Vec<(&str, &str)> = Vec::new();
    for c in &consts {
        for p in &preds[..2] {
            if rng.gen_bool(0.5) {
                facts.push((p, c));
            }
        }
    }
    if facts.is_empty() {
        facts.push((preds[0], consts[0]));
    }

    // Rule i derives preds[2 + i] from one or two earlier predicates; the
    // first body atom is always the immediately preceding one, so chains are
    // as deep as the number of rules.
    let mut rules: Vec<(Vec<&str>, &str)> = Vec::new();
    for i in 0..n_rules {
        let head = preds[2 + i];
        let mut body = vec![preds[1 + i]];
        if rng.gen_bool(0.4) {
            let other = preds[rng.gen_range(0..1 + i)];
            if other != body[0] {
                body.push(other);
            }
        }
        rules.push((body, head));
    }

    let program = Program {
        facts: facts.iter().map(|(p, c)| Atom::ground(p, &[c])).collect(),
        rules: rules
            .iter()
            .map(|(body, head)| Rule {
                head: Atom {
                    pred: head.to_string(),
                    args: vec![Term::Var("X".into())],
                },
                body: body
                    .iter()
                    .map(|p| Atom {
                        pred: p.to_string(),
                        args: vec![Term::Var("X".into())],
                    })
                    .collect(),
            })
            .collect(),
        query: None,
    };
    let closure = logic::fixpoint(&program).expect("generated programs are safe");

    let want_true = rng.gen_bool(0.5);
    let derived = &preds[2..];
    let mut query = (derived[0], consts[0]);
    for _ in 0..20 {
        let cand = (*derived.choose(rng).expect("rules exist"), *consts.choose(rng).expect("consts"));
        query = cand;
        let holds = closure.contains(&(cand.0.to_string(), vec![cand.1.to_string()]));
        if holds == want_true {
            break;
        }
    }
    let answer = closure.contains(&(query.0.to_string(), vec![query.1.to_string()]));

    let mut x: TokenSeq = vec!["facts".into()];
    for (i, (p, c)) in facts.iter().enumerate() {
        if i > 0 {
            x.push(",".into());
        }
        x.extend([p.to_string(), c.to_string()]);
    }
    x.extend([";".to_string(), "rules".into()]);
    for (i, (body, head)) in rules.iter().enumerate() {
        if i > 0 {
            x.push(",".into());
        }
        x.extend(body.iter().map(|p| p.to_string()));
        x.extend(["->".to_string(), head.to_string()]);
    }
    x.extend([";", "ask", query.0, query.1].map(String::from));

    let mut w: TokenSeq = Vec::new();
    let atom = |p: &str, arg: &str| [p, "(", arg, ")"].map(String::from);
    for (p, c) in &facts {
        w.push("fact".into());
        w.extend(atom(p, c));
        w.push(".".into());
    }
    for (body, head) in &rules {
        w.push("rule".into());
        w.extend(atom(head, "X"));
        w.push(":-".into());
        for (i, p) in body.iter().enumerate() {
            if i > 0 {
                w.push(",".into());
            }
            w.extend(atom(p, "X"));
        }
        w.push(".".into());
    }
    w.push("query".into());
    w.extend(atom(query.0, query.1));
    w.push("?".into());
    (x, answer.to_string(), w)
}

fn grid_task(rng: &mut ChaCha8Rng, split: Split) -> (TokenSeq, String, TokenSeq) {
    let sizes = match split {
        Split::HeldIn => GRID_HELD_IN_SIZES,
        Split::HeldOut => GRID_HELD_OUT_SIZES,
    };
    loop {
        let width = rng.gen_range(sizes.clone());
        let height = rng.gen_range(sizes.clone());
        let mut cells: Vec<(usize, usize)> = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).collect();
        cells.shuffle(rng);
        let n_walls = rng.gen_range(0..=width * height / 5);
        let start = cells[0];
        let goal = cells[1];
        let walls: BTreeSet<_> = cells[2..2 + n_walls].iter().copied().collect();
        let grid = Grid {
            width,
            height,
            start,
            goal,
            walls,
        };
        if let Some(path) = grid.shortest_path() {
            let witness = path.iter().map(|a| a.token().to_string()).collect();
            return (grid.to_tokens(), cell_string(goal), witness);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WitnessLine {
    id: String,
    #[serde(with = "space_joined")]
    a: TokenSeq,
}

fn io_err(path: &Path, source: std::io::Error) -> EnvError {
    EnvError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), EnvError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("plain data serialises");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EnvError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EnvError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_tasks(path: &Path, tasks: &[TaskInstance]) -> Result<(), EnvError> {
    write_lines(path, tasks)
}

/// Reads a task file, rejecting duplicate ids and empty expected outputs.
pub fn read_tasks(path: &Path) -> Result<Vec<TaskInstance>, EnvError> {
    let tasks: Vec<TaskInstance> = read_lines(path)?;
    let mut seen = HashSet::new();
    for (i, t) in tasks.iter().enumerate() {
        if !seen.insert(t.id.as_str()) || t.y.trim().is_empty() {
            return Err(EnvError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("task `{}` is duplicated or has an empty output", t.id),
            });
        }
    }
    Ok(tasks)
}

pub fn write_witnesses(path: &Path, witnesses: &BTreeMap<String, TokenSeq>) -> Result<(), EnvError> {
    write_lines(
        path,
        witnesses.iter().map(|(id, a)| WitnessLine {
            id: id.clone(),
            a: a.clone(),
        }),
    )
}

pub fn read_witnesses(path: &Path) -> Result<BTreeMap<String, TokenSeq>, EnvError> {
    let lines: Vec<WitnessLine> = read_lines(path)?;
    Ok(lines.into_iter().map(|w| (w.id, w.a)).collect())
}
