//! Integer arithmetic expressions over identifiers bound in the task input.
//!
//! Grammar (standard precedence, left associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/' | '%') factor)*
//! factor := INT | IDENT | '(' expr ')'
//! ```
//!
//! Division is exact: `7/2` is a runtime error rather than `3`, so every
//! successful evaluation yields a canonical integer.

use std::collections::HashMap;
use std::fmt;

use super::{ExecStatus, ExecutionResult, TaskInstance};

/// Evaluation step budget; exceeding it reports `Timeout`.
pub const STEP_BUDGET: usize = 10_000;
const MAX_NESTING: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            Self::Add => '+',
            Self::Sub => '-',
            Self::Mul => '*',
            Self::Div => '/',
            Self::Rem => '%',
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            Self::Add | Self::Sub => 1,
            Self::Mul | Self::Div | Self::Rem => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            b'+' => Self::Add,
            b'-' => Self::Sub,
            b'*' => Self::Mul,
            b'/' => Self::Div,
            b'%' => Self::Rem,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Var(String),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl fmt::Display for Expr {
    /// Fully parenthesised rendering, used in diagnostics.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            Self::Var(name) => f.write_str(name),
            Self::Bin(op, l, r) => write!(f, "({l}{}{r})", op.symbol()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at byte {}: {}", self.offset, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalError {
    Unbound(String),
    DivisionByZero,
    InexactDivision(i64, i64),
    Overflow,
    StepBudget,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Unbound(name) => write!(f, "unbound identifier `{name}`"),
            Self::DivisionByZero => f.write_str("division by zero"),
            Self::InexactDivision(a, b) => write!(f, "{a} is not divisible by {b}"),
            Self::Overflow => f.write_str("integer overflow"),
            Self::StepBudget => write!(f, "exceeded {STEP_BUDGET} evaluation steps"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Int(i64),
    Ident(String),
    Op(BinOp),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if b.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let value = src[start..i].parse::<i64>().map_err(|_| ParseError {
                offset: start,
                message: "integer literal too large".into(),
            })?;
            out.push((start, Tok::Int(value)));
        } else if b.is_ascii_alphabetic() || b == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if let Some(op) = BinOp::from_byte(b) {
            out.push((start, Tok::Op(op)));
            i += 1;
        } else if b == b'(' {
            out.push((start, Tok::LParen));
            i += 1;
        } else if b == b')' {
            out.push((start, Tok::RParen));
            i += 1;
        } else {
            let ch = src[start..].chars().next().unwrap_or('?');
            return Err(ParseError {
                offset: start,
                message: format!("unexpected character `{ch}`"),
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

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn expr(&mut self, depth: usize) -> Result<Expr, ParseError> {
        let mut lhs = self.term(depth)?;
        while let Some(Tok::Op(op @ (BinOp::Add | BinOp::Sub))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.term(depth)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self, depth: usize) -> Result<Expr, ParseError> {
        let mut lhs = self.factor(depth)?;
        while let Some(Tok::Op(op @ (BinOp::Mul | BinOp::Div | BinOp::Rem))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.factor(depth)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self, depth: usize) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(Expr::Int(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                Ok(Expr::Var(name))
            }
            Some(Tok::LParen) => {
                if depth >= MAX_NESTING {
                    return Err(self.err("parentheses nested too deeply"));
                }
                self.pos += 1;
                let inner = self.expr(depth + 1)?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(_) => Err(self.err("expected an operand")),
            None => Err(self.err("unexpected end of input")),
        }
    }
}

/// Parses a complete expression; trailing tokens are an error.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let expr = parser.expr(0)?;
    if parser.pos != parser.toks.len() {
        return Err(parser.err("unexpected trailing input"));
    }
    Ok(expr)
}

/// Evaluates with checked `i64` arithmetic under [`STEP_BUDGET`].
pub fn evaluate(expr: &Expr, bindings: &HashMap<String, i64>) -> Result<i64, EvalError> {
    let mut steps = 0;
    eval_inner(expr, bindings, &mut steps)
}

fn eval_inner(expr: &Expr, bindings: &HashMap<String, i64>, steps: &mut usize) -> Result<i64, EvalError> {
    *steps += 1;
    if *steps > STEP_BUDGET {
        return Err(EvalError::StepBudget);
    }
    match expr {
        Expr::Int(v) => Ok(*v),
        Expr::Var(name) => bindings
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::Unbound(name.clone())),
        Expr::Bin(op, l, r) => {
            let a = eval_inner(l, bindings, steps)?;
            let b = eval_inner(r, bindings, steps)?;
            match op {
                BinOp::Add => a.checked_add(b).ok_or(EvalError::Overflow),
                BinOp::Sub => a.checked_sub(b).ok_or(EvalError::Overflow),
                BinOp::Mul => a.checked_mul(b).ok_or(EvalError::Overflow),
                BinOp::Div | BinOp::Rem if b == 0 => Err(EvalError::DivisionByZero),
                BinOp::Div => {
                    let rem = a.checked_rem(b).ok_or(EvalError::Overflow)?;
                    if rem != 0 {
                        return Err(EvalError::InexactDivision(a, b));
                    }
                    a.checked_div(b).ok_or(EvalError::Overflow)
                }
                BinOp::Rem => a.checked_rem(b).ok_or(EvalError::Overflow),
            }
        }
    }
}

/// Minimal-parenthesis infix rendering, one character per token.
pub fn render_infix(expr: &Expr) -> String {
    fn go(e: &Expr, out: &mut String) {
        match e {
            Expr::Int(v) => out.push_str(&v.to_string()),
            Expr::Var(name) => out.push_str(name),
            Expr::Bin(op, l, r) => {
                let wrap_left = matches!(**l, Expr::Bin(lop, ..) if lop.precedence() < op.precedence());
                let wrap_right = matches!(**r, Expr::Bin(rop, ..)
                    if rop.precedence() < op.precedence()
                        || (rop.precedence() == op.precedence()
                            && (matches!(op, BinOp::Sub | BinOp::Div | BinOp::Rem) || rop != *op)));
                wrapped(l, wrap_left, out);
                out.push(op.symbol());
                wrapped(r, wrap_right, out);
            }
        }
    }
    fn wrapped(e: &Expr, wrap: bool, out: &mut String) {
        if wrap {
            out.push('(');
        }
        go(e, out);
        if wrap {
            out.push(')');
        }
    }
    let mut out = String::new();
    go(expr, &mut out);
    out
}

/// Reads `name = digits...` bindings out of an input token sequence.
pub fn bindings_from_x(x: &[String]) -> HashMap<String, i64> {
    let mut out = HashMap::new();
    let mut i = 0;
    while i + 2 < x.len() {
        let name = &x[i];
        let is_ident = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && name.chars().all(|c| c.is_ascii_alphanumeric());
        if is_ident && x[i + 1] == "=" {
            let mut j = i + 2;
            let negative = x[j] == "-";
            if negative {
                j += 1;
            }
            let mut digits = String::new();
            while j < x.len() && !x[j].is_empty() && x[j].chars().all(|c| c.is_ascii_digit()) {
                digits.push_str(&x[j]);
                j += 1;
            }
            if let Ok(v) = digits.parse::<i64>() {
                out.insert(name.clone(), if negative { -v } else { v });
                i = j;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Executes a rendered expression source against a task.
pub fn run_expr(src: &str, task: &TaskInstance) -> ExecutionResult {
    let expr = match parse_expr(src) {
        Ok(e) => e,
        Err(e) => return ExecutionResult::failed(ExecStatus::ParseError, e.to_string()),
    };
    match evaluate(&expr, &bindings_from_x(&task.x)) {
        Ok(v) => ExecutionResult::completed(v.to_string(), &task.y),
        Err(EvalError::StepBudget) => {
            ExecutionResult::failed(ExecStatus::Timeout, EvalError::StepBudget.to_string())
        }
        Err(e) => ExecutionResult::failed(ExecStatus::RuntimeError, e.to_string()),
    }
}
