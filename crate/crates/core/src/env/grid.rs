//! Deterministic grid-walking agent.
//!
//! Task inputs look like `grid W H start r c goal r c wall r c ...` with
//! `(row, col)` coordinates; actions are `U D L R`. Moves into a wall or off
//! the board leave the agent in place.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use super::{ExecStatus, ExecutionResult, TaskInstance};

/// Longest action sequence the simulator will run.
pub const ACTION_BUDGET: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn token(self) -> &'static str {
        match self {
            Self::Up => "U",
            Self::Down => "D",
            Self::Left => "L",
            Self::Right => "R",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.token() == token)
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Self::Up => (-1, 0),
            Self::Down => (1, 0),
            Self::Left => (0, -1),
            Self::Right => (0, 1),
        }
    }
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal: Cell,
    pub walls: BTreeSet<Cell>,
}

impl Grid {
    pub fn step(&self, from: Cell, action: Action) -> Cell {
        let (dr, dc) = action.delta();
        let (r, c) = (from.0 as i64 + dr, from.1 as i64 + dc);
        if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
            return from;
        }
        let to = (r as usize, c as usize);
        if self.walls.contains(&to) {
            from
        } else {
            to
        }
    }

    pub fn walk(&self, actions: &[Action]) -> Cell {
        actions.iter().fold(self.start, |cell, &a| self.step(cell, a))
    }

    /// Input tokens describing this grid.
    pub fn to_tokens(&self) -> Vec<String> {
        let mut out = vec![
            "grid".to_string(),
            self.width.to_string(),
            self.height.to_string(),
            "start".into(),
            self.start.0.to_string(),
            self.start.1.to_string(),
            "goal".into(),
            self.goal.0.to_string(),
            self.goal.1.to_string(),
        ];
        for (r, c) in &self.walls {
            out.extend(["wall".to_string(), r.to_string(), c.to_string()]);
        }
        out
    }

    pub fn from_tokens(x: &[String]) -> Result<Self, String> {
        let num = |i: usize| -> Result<usize, String> {
            x.get(i)
                .ok_or_else(|| format!("grid description ends early at token {i}"))?
                .parse::<usize>()
                .map_err(|_| format!("expected a number at token {i}"))
        };
        let keyword = |i: usize, kw: &str| -> Result<(), String> {
            match x.get(i) {
                Some(t) if t == kw => Ok(()),
                _ => Err(format!("expected `{kw}` at token {i}")),
            }
        };
        keyword(0, "grid")?;
        let (width, height) = (num(1)?, num(2)?);
        keyword(3, "start")?;
        let start = (num(4)?, num(5)?);
        keyword(6, "goal")?;
        let goal = (num(7)?, num(8)?);
        let mut walls = BTreeSet::new();
        let mut i = 9;
        while i < x.len() {
            keyword(i, "wall")?;
            walls.insert((num(i + 1)?, num(i + 2)?));
            i += 3;
        }
        let inside = |(r, c): Cell| r < height && c < width;
        if width == 0 || height == 0 || !inside(start) || !inside(goal) {
            return Err("start or goal outside the grid".into());
        }
        Ok(Self {
            width,
            height,
            start,
            goal,
            walls,
        })
    }

    /// Shortest action sequence from start to goal, trying moves in
    /// `U D L R` order; `None` when the goal is walled off.
    pub fn shortest_path(&self) -> Option<Vec<Action>> {
        let mut prev = vec![vec![None; self.width]; self.height];
        let mut seen = vec![vec![false; self.width]; self.height];
        let mut queue = VecDeque::from([self.start]);
        seen[self.start.0][self.start.1] = true;
        while let Some(cell) = queue.pop_front() {
            if cell == self.goal {
                let mut path = Vec::new();
                let mut cur = cell;
                while let Some((from, action)) = prev[cur.0][cur.1] {
                    path.push(action);
                    cur = from;
                }
                path.reverse();
                return Some(path);
            }
            for action in Action::ALL {
                let next = self.step(cell, action);
                if !seen[next.0][next.1] {
                    seen[next.0][next.1] = true;
                    prev[next.0][next.1] = Some((cell, action));
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

pub fn cell_string((r, c): Cell) -> String {
    format!("{r} {c}")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownAction {
    pub offset: usize,
    pub token: String,
}

impl fmt::Display for UnknownAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at byte {}: unknown action `{}`", self.offset, self.token)
    }
}

pub fn parse_actions(src: &str) -> Result<Vec<Action>, UnknownAction> {
    let mut out = Vec::new();
    let mut offset = 0;
    for piece in src.split_inclusive(char::is_whitespace) {
        let token = piece.trim_end();
        if !token.is_empty() {
            out.push(Action::parse(token).ok_or_else(|| UnknownAction {
                offset,
                token: token.to_string(),
            })?);
        }
        offset += piece.len();
    }
    Ok(out)
}

/// Walks the actions and reports the final cell as `"row col"`.
pub fn run_grid(src: &str, task: &TaskInstance) -> ExecutionResult {
    let actions = match parse_actions(src) {
        Ok(a) => a,
        Err(e) => return ExecutionResult::failed(ExecStatus::ParseError, e.to_string()),
    };
    if actions.len() > ACTION_BUDGET {
        return ExecutionResult::failed(
            ExecStatus::Timeout,
            format!("{} actions exceed the budget of {ACTION_BUDGET}", actions.len()),
        );
    }
    match Grid::from_tokens(&task.x) {
        Ok(grid) => ExecutionResult::completed(cell_string(grid.walk(&actions)), &task.y),
        Err(e) => ExecutionResult::failed(ExecStatus::RuntimeError, e),
    }
}
