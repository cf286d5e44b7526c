//! Forward-chaining Datalog over a tiny fact/rule/query language.
//!
//! ```text
//! fact p(a).
//! rule q(X) :- p(X), r(X).
//! query q(a)?
//! ```
//!
//! Identifiers starting with an uppercase letter are variables; everything
//! else is a predicate or constant. Rules must be range restricted (every
//! head variable occurs in the body), so the constant universe is exactly the
//! constants mentioned by the program.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{ExecStatus, ExecutionResult, TaskInstance};

/// Maximum number of fixpoint rounds before reporting `Timeout`.
pub const FIXPOINT_BUDGET: usize = 1_000;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Const(String),
    Var(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn ground(pred: &str, args: &[&str]) -> Self {
        Self {
            pred: pred.to_string(),
            args: args.iter().map(|a| Term::Const(a.to_string())).collect(),
        }
    }

    fn is_ground(&self) -> bool {
        self.args.iter().all(|t| matches!(t, Term::Const(_)))
    }

    fn fact_key(&self) -> Fact {
        (
            self.pred.clone(),
            self.args
                .iter()
                .map(|t| match t {
                    Term::Const(c) | Term::Var(c) => c.clone(),
                })
                .collect(),
        )
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<&str> = self
            .args
            .iter()
            .map(|t| match t {
                Term::Const(c) | Term::Var(c) => c.as_str(),
            })
            .collect();
        write!(f, "{}({})", self.pred, args.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Atom>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    pub facts: Vec<Atom>,
    pub rules: Vec<Rule>,
    pub query: Option<Atom>,
}

/// A ground fact: predicate name and constant arguments.
pub type Fact = (String, Vec<String>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogicError {
    Parse { offset: usize, message: String },
    Runtime(String),
    Timeout,
}

impl fmt::Display for LogicError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse { offset, message } => write!(f, "parse error at byte {offset}: {message}"),
            Self::Runtime(msg) => f.write_str(msg),
            Self::Timeout => write!(f, "no fixpoint within {FIXPOINT_BUDGET} rounds"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Question,
    Implies,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, LogicError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        let single = match b {
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            b'.' => Some(Tok::Dot),
            b'?' => Some(Tok::Question),
            _ => None,
        };
        if b.is_ascii_whitespace() {
            i += 1;
        } else if let Some(tok) = single {
            out.push((start, tok));
            i += 1;
        } else if b == b':' && bytes.get(i + 1) == Some(&b'-') {
            out.push((start, Tok::Implies));
            i += 2;
        } else if b.is_ascii_alphanumeric() || b == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else {
            return Err(LogicError::Parse {
                offset: start,
                message: format!("unexpected character `{}`", src[start..].chars().next().unwrap_or('?')),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn err(&self, message: impl Into<String>) -> LogicError {
        LogicError::Parse {
            offset: self.toks.get(self.pos).map_or(self.end, |(o, _)| *o),
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), LogicError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, LogicError> {
        match self.peek() {
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn atom(&mut self) -> Result<Atom, LogicError> {
        let pred = self.ident("a predicate")?;
        if pred.starts_with(|c: char| c.is_ascii_uppercase() || c.is_ascii_digit()) {
            self.pos -= 1;
            return Err(self.err("predicate names must start with a lowercase letter"));
        }
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        loop {
            let name = self.ident("a term")?;
            args.push(if name.starts_with(|c: char| c.is_ascii_uppercase()) {
                Term::Var(name)
            } else {
                Term::Const(name)
            });
            match self.peek() {
                Some(Tok::Comma) => self.pos += 1,
                Some(Tok::RParen) => {
                    self.pos += 1;
                    return Ok(Atom { pred, args });
                }
                _ => return Err(self.err("expected `,` or `)`")),
            }
        }
    }
}

pub fn parse_program(src: &str) -> Result<Program, LogicError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        end: src.len(),
    };
    let mut program = Program::default();
    while p.pos < p.toks.len() {
        let keyword = p.ident("`fact`, `rule` or `query`")?;
        match keyword.as_str() {
            "fact" => {
                let atom = p.atom()?;
                p.expect(Tok::Dot, "`.`")?;
                program.facts.push(atom);
            }
            "rule" => {
                let head = p.atom()?;
                p.expect(Tok::Implies, "`:-`")?;
                let mut body = vec![p.atom()?];
                while p.peek() == Some(&Tok::Comma) {
                    p.pos += 1;
                    body.push(p.atom()?);
                }
                p.expect(Tok::Dot, "`.`")?;
                program.rules.push(Rule { head, body });
            }
            "query" => {
                if program.query.is_some() {
                    p.pos -= 1;
                    return Err(p.err("only one query is allowed"));
                }
                let atom = p.atom()?;
                p.expect(Tok::Question, "`?`")?;
                program.query = Some(atom);
            }
            _ => {
                p.pos -= 1;
                return Err(p.err("expected `fact`, `rule` or `query`"));
            }
        }
    }
    Ok(program)
}

fn check_program(program: &Program) -> Result<(), LogicError> {
    if let Some(f) = program.facts.iter().find(|f| !f.is_ground()) {
        return Err(LogicError::Runtime(format!("fact {f} is not ground")));
    }
    for rule in &program.rules {
        let body_vars: BTreeSet<&Term> = rule
            .body
            .iter()
            .flat_map(|a| a.args.iter())
            .filter(|t| matches!(t, Term::Var(_)))
            .collect();
        if let Some(v) = rule
            .head
            .args
            .iter()
            .find(|t| matches!(t, Term::Var(_)) && !body_vars.contains(t))
        {
            return Err(LogicError::Runtime(format!(
                "rule for {} is unsafe: {v:?} does not occur in the body",
                rule.head
            )));
        }
    }
    match &program.query {
        Some(q) if !q.is_ground() => Err(LogicError::Runtime(format!("query {q} is not ground"))),
        _ => Ok(()),
    }
}

type Binding = BTreeMap<String, String>;

fn unify(atom: &Atom, fact: &Fact, binding: &Binding) -> Option<Binding> {
    if atom.pred != fact.0 || atom.args.len() != fact.1.len() {
        return None;
    }
    let mut out = binding.clone();
    for (term, value) in atom.args.iter().zip(&fact.1) {
        match term {
            Term::Const(c) if c != value => return None,
            Term::Const(_) => {}
            Term::Var(v) => match out.get(v) {
                Some(bound) if bound != value => return None,
                Some(_) => {}
                None => {
                    out.insert(v.clone(), value.clone());
                }
            },
        }
    }
    Some(out)
}

fn instantiate(atom: &Atom, binding: &Binding) -> Fact {
    let args = atom
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => c.clone(),
            Term::Var(v) => binding[v].clone(),
        })
        .collect();
    (atom.pred.clone(), args)
}

/// Least fixpoint of the program's facts under its rules.
///
/// Each round applies every rule against the facts known at the start of
/// the round; rounds repeat until nothing new is derived.
pub fn fixpoint(program: &Program) -> Result<BTreeSet<Fact>, LogicError> {
    check_program(program)?;
    let mut known: BTreeSet<Fact> = program.facts.iter().map(Atom::fact_key).collect();
    for _ in 0..FIXPOINT_BUDGET {
        let mut derived = Vec::new();
        for rule in &program.rules {
            let mut bindings = vec![Binding::new()];
            for atom in &rule.body {
                bindings = bindings
                    .iter()
                    .flat_map(|b| known.iter().filter_map(move |f| unify(atom, f, b)))
                    .collect();
                if bindings.is_empty() {
                    break;
                }
            }
            derived.extend(bindings.iter().map(|b| instantiate(&rule.head, b)));
        }
        let before = known.len();
        known.extend(derived);
        if known.len() == before {
            return Ok(known);
        }
    }
    Err(LogicError::Timeout)
}

/// The `ask <pred> <const>...` atom from a task input, if present.
pub fn query_from_x(x: &[String]) -> Option<Atom> {
    let pos = x.iter().position(|t| t == "ask")?;
    let pred = x.get(pos + 1)?;
    let args: Vec<&str> = x[pos + 2..].iter().map(String::as_str).collect();
    Some(Atom::ground(pred, &args))
}

/// Runs the program and answers its query with `true`/`false`.
///
/// When the task input names a query, the program must ask exactly that.
pub fn run_logic(src: &str, task: &TaskInstance) -> ExecutionResult {
    let program = match parse_program(src) {
        Ok(p) => p,
        Err(e) => return ExecutionResult::failed(ExecStatus::ParseError, e.to_string()),
    };
    let Some(query) = program.query.clone() else {
        return ExecutionResult::failed(ExecStatus::RuntimeError, "program has no query".into());
    };
    if let Some(expected) = query_from_x(&task.x) {
        if expected != query {
            return ExecutionResult::failed(
                ExecStatus::RuntimeError,
                format!("query {query} does not match the task's {expected}"),
            );
        }
    }
    match fixpoint(&program) {
        Ok(facts) => {
            let answer = facts.contains(&query.fact_key());
            ExecutionResult::completed(answer.to_string(), &task.y)
        }
        Err(LogicError::Timeout) => ExecutionResult::failed(ExecStatus::Timeout, LogicError::Timeout.to_string()),
        Err(e @ LogicError::Parse { .. }) => ExecutionResult::failed(ExecStatus::ParseError, e.to_string()),
        Err(e) => ExecutionResult::failed(ExecStatus::RuntimeError, e.to_string()),
    }
}
