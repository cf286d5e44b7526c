//! Executable symbolic environments.
//!
//! Each environment parses a candidate solution, runs it against the task
//! input and compares the result with the expected output, yielding binary
//! feedback. Execution never fails loudly: malformed or crashing solutions
//! are reported through [`ExecStatus`] with `b = 0`.

mod dataset;
pub mod expr;
pub mod grid;
pub mod logic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::{space_joined, TokenSeq};

pub use dataset::{
    generate_dataset, read_tasks, read_witnesses, write_tasks, write_witnesses, Dataset,
    EXPR_HELD_IN_OPERANDS, EXPR_HELD_OUT_OPERANDS, GRID_HELD_IN_SIZES, GRID_HELD_OUT_SIZES,
    LOGIC_HELD_IN_RULES, LOGIC_HELD_OUT_RULES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    ExprMath,
    LogicRules,
    GridAgent,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::ExprMath, EnvKind::LogicRules, EnvKind::GridAgent];

    pub fn name(self) -> &'static str {
        match self {
            Self::ExprMath => "expr_math",
            Self::LogicRules => "logic_rules",
            Self::GridAgent => "grid_agent",
        }
    }

    /// Source text handed to the executor. Expression tokens are single
    /// characters and are concatenated; the other grammars are whitespace
    /// separated.
    pub fn render(self, a: &[String]) -> String {
        match self {
            Self::ExprMath => a.concat(),
            Self::LogicRules | Self::GridAgent => a.join(" "),
        }
    }

    /// Generation length cap that comfortably covers every witness.
    pub fn max_solution_len(self) -> usize {
        match self {
            Self::ExprMath => 24,
            Self::LogicRules => 112,
            Self::GridAgent => 40,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| EnvError::Invalid(format!("unknown environment `{s}` (expected expr_math, logic_rules or grid_agent)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    HeldIn,
    HeldOut,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::HeldIn => "held_in",
            Self::HeldOut => "held_out",
        }
    }
}

impl FromStr for Split {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "held_in" => Ok(Self::HeldIn),
            "held_out" => Ok(Self::HeldOut),
            _ => Err(EnvError::Invalid(format!("unknown split `{s}` (expected held_in or held_out)"))),
        }
    }
}

/// One `(x, y)` task: tokenised input description and expected output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    #[serde(with = "space_joined")]
    pub x: TokenSeq,
    pub y: String,
    pub split: Split,
    pub env: EnvKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    ParseError,
    RuntimeError,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub output: Option<String>,
    /// Binary feedback: 1 iff the run succeeded and matched the expected output.
    pub b: u8,
    pub detail: Option<String>,
}

impl ExecutionResult {
    pub(crate) fn completed(output: String, expected: &str) -> Self {
        let b = u8::from(canonicalize(&output) == canonicalize(expected));
        Self {
            status: ExecStatus::Ok,
            output: Some(output),
            b,
            detail: None,
        }
    }

    pub(crate) fn failed(status: ExecStatus, detail: String) -> Self {
        debug_assert_ne!(status, ExecStatus::Ok);
        Self {
            status,
            output: None,
            b: 0,
            detail: Some(detail),
        }
    }

    pub fn solved(&self) -> bool {
        self.b == 1
    }
}

/// Trims and collapses whitespace; integer-looking text is normalised
/// (`"+011"` becomes `"11"`, `"-0"` becomes `"0"`).
pub fn canonicalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let digits = collapsed.strip_prefix(['+', '-']).unwrap_or(&collapsed);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        let trimmed = digits.trim_start_matches('0');
        let magnitude = if trimmed.is_empty() { "0" } else { trimmed };
        if collapsed.starts_with('-') && magnitude != "0" {
            return format!("-{magnitude}");
        }
        return magnitude.to_string();
    }
    collapsed
}

/// Runs a candidate solution `a` for `task` in environment `env`.
///
/// Pure and deterministic. An empty solution is only meaningful for the grid
/// agent (stand still); elsewhere it is a parse error.
pub fn execute(env: EnvKind, task: &TaskInstance, a: &[String]) -> ExecutionResult {
    if a.is_empty() && env != EnvKind::GridAgent {
        return ExecutionResult::failed(ExecStatus::ParseError, "parse error at byte 0: empty solution".into());
    }
    let src = env.render(a);
    match env {
        EnvKind::ExprMath => expr::run_expr(&src, task),
        EnvKind::LogicRules => logic::run_logic(&src, task),
        EnvKind::GridAgent => grid::run_grid(&src, task),
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::split;

    fn task(env: EnvKind, x: &str, y: &str) -> TaskInstance {
        TaskInstance {
            id: "t".into(),
            x: split(x),
            y: y.into(),
            split: Split::HeldIn,
            env,
        }
    }

    #[test]
    fn expr_examples() {
        let t = task(EnvKind::ExprMath, "a = 1 ;", "11");
        let ok = execute(EnvKind::ExprMath, &t, &split("3 + 4 * 2"));
        assert_eq!((ok.status, ok.output.as_deref(), ok.b), (ExecStatus::Ok, Some("11"), 1));
        let t7 = task(EnvKind::ExprMath, "a = 1 ;", "7");
        let bad = execute(EnvKind::ExprMath, &t7, &split("3 + * 4"));
        assert_eq!((bad.status, bad.b), (ExecStatus::ParseError, 0));
        let inexact = execute(EnvKind::ExprMath, &t7, &["10/4".to_string()]);
        assert_eq!(inexact.status, ExecStatus::RuntimeError);
    }

    #[test]
    fn logic_example() {
        let t = task(EnvKind::LogicRules, "facts p a ; rules p -> q ; ask q a", "true");
        let a = split("fact p ( a ) . rule q ( X ) :- p ( X ) . query q ( a ) ?");
        assert_eq!(execute(EnvKind::LogicRules, &t, &a).b, 1);
        let empty = task(EnvKind::LogicRules, "ask q a", "false");
        assert_eq!(execute(EnvKind::LogicRules, &empty, &split("query q ( a ) ?")).output.as_deref(), Some("false"));
        let mismatch = execute(EnvKind::LogicRules, &t, &split("query q ( b ) ?"));
        assert_eq!(mismatch.status, ExecStatus::RuntimeError);
    }

    #[test]
    fn grid_examples() {
        let t = task(EnvKind::GridAgent, "grid 3 3 start 0 0 goal 0 2", "0 2");
        assert_eq!(execute(EnvKind::GridAgent, &t, &split("R R")).b, 1);
        let still = task(EnvKind::GridAgent, "grid 3 3 start 1 1 goal 1 1", "1 1");
        assert_eq!(execute(EnvKind::GridAgent, &still, &[]).b, 1);
        let r = execute(EnvKind::GridAgent, &t, &split("R X"));
        assert_eq!((r.status, r.b), (ExecStatus::ParseError, 0));
        let long = vec!["R".to_string(); grid::ACTION_BUDGET + 1];
        assert_eq!(execute(EnvKind::GridAgent, &t, &long).status, ExecStatus::Timeout);
    }

    #[test]
    fn empty_solution_is_a_parse_error() {
        let t = task(EnvKind::ExprMath, "a = 1 ;", "1");
        assert_eq!(execute(EnvKind::ExprMath, &t, &[]).status, ExecStatus::ParseError);
    }

    #[test]
    fn canonical_integers() {
        assert_eq!(canonicalize(" +11 "), "11");
        assert_eq!(canonicalize("0011"), "11");
        assert_eq!(canonicalize("-0"), "0");
        assert_eq!(canonicalize("-007"), "-7");
        assert_eq!(canonicalize("  0   2 "), "0 2");
        assert_eq!(canonicalize("true"), "true");
        assert_eq!(canonicalize("+"), "+");
    }

    #[test]
    fn env_names_parse() {
        for env in EnvKind::ALL {
            assert_eq!(env.name().parse::<EnvKind>().unwrap(), env);
        }
        assert!("python".parse::<EnvKind>().is_err());
    }
}
