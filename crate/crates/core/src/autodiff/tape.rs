//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every operation appends one node holding its forward value and enough
//! saved state to run its backward rule. Inputs always precede outputs, so a
//! single reverse sweep over the node list is a valid topological order.

use super::tensor::{self, Tensor};
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations with registered backward rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    /// `ln(1 + e^x)`; `-ln sigmoid(z)` is `softplus(-z)`.
    Softplus,
}

impl Elementwise {
    fn arity(self) -> usize {
        match self {
            Self::Add | Self::Sub | Self::Mul => 2,
            Self::Tanh | Self::Sigmoid | Self::Softplus => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Softplus => "softplus",
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Elementwise, Var, Var),
    Unary(Elementwise, Var),
    Scale(Var, f64),
    Sum(Var),
    Embedding { table: Var, ids: Vec<usize> },
    SliceRows { src: Var, start: usize },
    SliceCols { src: Var, start: usize },
    ConcatRows(Vec<Var>),
    LogSoftmaxNll { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. A tape supports exactly one backward pass; record a
/// fresh tape for the next step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], one entry per `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Records an input. Gradients are reported for it iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(AutodiffError::Shape {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        tensor::matmul_acc(ta.values(), tb.values(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if inputs.len() != op.arity() {
            return Err(AutodiffError::Contract(format!(
                "{} takes {} operand(s), got {}",
                op.name(),
                op.arity(),
                inputs.len()
            )));
        }
        if op.arity() == 1 {
            let a = inputs[0];
            let src = self.value(a);
            let f: fn(f64) -> f64 = match op {
                Elementwise::Tanh => f64::tanh,
                Elementwise::Sigmoid => tensor::sigmoid,
                _ => tensor::softplus,
            };
            let values = src.values().iter().map(|&v| f(v)).collect();
            let value = Tensor::new(src.shape().to_vec(), values)?;
            let needs = self.needs(a);
            return Ok(self.push(value, Op::Unary(op, a), needs));
        }

        let (a, b) = (inputs[0], inputs[1]);
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() {
            ta.shape().to_vec()
        } else if tb.len() == 1 {
            ta.shape().to_vec()
        } else if ta.len() == 1 {
            tb.shape().to_vec()
        } else {
            return Err(AutodiffError::Shape {
                op: op.name(),
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        };
        let n: usize = shape.iter().product();
        let (va, vb) = (ta.values(), tb.values());
        let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let values = (0..n)
            .map(|i| {
                let (x, y) = (at(va, i), at(vb, i));
                match op {
                    Elementwise::Add => x + y,
                    Elementwise::Sub => x - y,
                    _ => x * y,
                }
            })
            .collect();
        let value = Tensor::new(shape, values)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Binary(op, a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Mul, &[a, b])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::Tanh, &[a]).expect("unary op")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::Sigmoid, &[a]).expect("unary op")
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::Softplus, &[a]).expect("unary op")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let src = self.value(a);
        let values = src.values().iter().map(|v| v * factor).collect();
        let value = Tensor::new(src.shape().to_vec(), values).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, factor), needs)
    }

    /// Sum of all elements as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).values().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    /// Gathers rows of `table` (`V x d`) into an `L x d` matrix.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(table);
        let (vocab, d) = (t.rows(), t.cols());
        let mut values = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(AutodiffError::Index { id, bound: vocab });
            }
            values.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], values)?;
        let needs = self.needs(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(src);
        if start + len > t.rows() {
            return Err(AutodiffError::Index {
                id: start + len,
                bound: t.rows(),
            });
        }
        let c = t.cols();
        let values = t.values()[start * c..(start + len) * c].to_vec();
        let value = Tensor::new(vec![len, c], values)?;
        let needs = self.needs(src);
        Ok(self.push(value, Op::SliceRows { src, start }, needs))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(src);
        let (r, c) = (t.rows(), t.cols());
        if start + len > c {
            return Err(AutodiffError::Index {
                id: start + len,
                bound: c,
            });
        }
        let mut values = Vec::with_capacity(r * len);
        for i in 0..r {
            values.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let value = Tensor::new(vec![r, len], values)?;
        let needs = self.needs(src);
        Ok(self.push(value, Op::SliceCols { src, start }, needs))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Precondition("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(AutodiffError::Shape {
                    op: "concat_rows",
                    left: self.value(*first).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            values.extend_from_slice(t.values());
        }
        let value = Tensor::new(vec![rows, cols], values)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`L x V`). Also returns the per-row target log-probabilities.
    pub fn log_softmax_nll(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<(Var, Vec<f64>), AutodiffError> {
        if targets.is_empty() {
            return Err(AutodiffError::Precondition("log_softmax_nll needs at least one target".into()));
        }
        let t = self.value(logits);
        let (rows, vocab) = (t.rows(), t.cols());
        if rows != targets.len() {
            return Err(AutodiffError::Shape {
                op: "log_softmax_nll",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut probs = Vec::with_capacity(rows * vocab);
        let mut logps = Vec::with_capacity(rows);
        for (i, &target) in targets.iter().enumerate() {
            if target >= vocab {
                return Err(AutodiffError::Index { id: target, bound: vocab });
            }
            let lp = tensor::log_softmax(t.row(i));
            logps.push(lp[target]);
            probs.extend(lp.iter().map(|v| v.exp()));
        }
        let loss = -logps.iter().sum::<f64>();
        let needs = self.needs(logits);
        let var = self.push(
            Tensor::scalar(loss),
            Op::LogSoftmaxNll {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        );
        Ok((var, logps))
    }

    /// Reverse sweep from a scalar `loss`. Returns a gradient for every leaf
    /// created with `requires_grad`, zero when the leaf does not reach `loss`.
    ///
    /// A tape can be differentiated once; a second call is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut out: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Some(g) = grads[idx].take() {
                self.propagate(idx, g, &mut grads, &mut out)?;
            }
        }
        for (node, slot) in self.nodes.iter().zip(out.iter_mut()) {
            if node.needs_grad && matches!(node.op, Op::Leaf) && slot.is_none() {
                let zeros = vec![0.0; node.value.len()];
                *slot = Some(Tensor::new(node.value.shape().to_vec(), zeros)?);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(
        &self,
        idx: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        out: &mut [Option<Tensor>],
    ) -> Result<(), AutodiffError> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {
                out[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    tensor::matmul_a_bt_acc(&g, tb.values(), ga, m, k, n);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    tensor::matmul_at_b_acc(ta.values(), &g, gb, m, k, n);
                }
            }
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                for (side, this, other) in [(0, *a, vb), (1, *b, va)] {
                    let Some(slot) = self.slot(grads, this) else {
                        continue;
                    };
                    let broadcast = slot.len() == 1 && g.len() != 1;
                    for (i, gi) in g.iter().enumerate() {
                        let d = match op {
                            Elementwise::Add => *gi,
                            Elementwise::Sub if side == 0 => *gi,
                            Elementwise::Sub => -gi,
                            _ => gi * at(other, i),
                        };
                        if broadcast {
                            slot[0] += d;
                        } else {
                            slot[i] += d;
                        }
                    }
                }
            }
            Op::Unary(op, a) => {
                let x = self.value(*a).values();
                let y = node.value.values();
                if let Some(slot) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        slot[i] += g[i]
                            * match op {
                                Elementwise::Tanh => 1.0 - y[i] * y[i],
                                Elementwise::Sigmoid => y[i] * (1.0 - y[i]),
                                _ => tensor::sigmoid(x[i]),
                            };
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(slot) = self.slot(grads, *a) {
                    for (s, gi) in slot.iter_mut().zip(&g) {
                        *s += gi * factor;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(slot) = self.slot(grads, *a) {
                    for s in slot.iter_mut() {
                        *s += g[0];
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                if let Some(slot) = self.slot(grads, *table) {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            slot[id * d + j] += g[row * d + j];
                        }
                    }
                }
            }
            Op::SliceRows { src, start } => {
                let c = self.value(*src).cols();
                if let Some(slot) = self.slot(grads, *src) {
                    for (s, gi) in slot[start * c..].iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
            }
            Op::SliceCols { src, start } => {
                let c = self.value(*src).cols();
                let len = node.value.cols();
                if let Some(slot) = self.slot(grads, *src) {
                    for (i, grow) in g.chunks(len).enumerate() {
                        for (j, gi) in grow.iter().enumerate() {
                            slot[i * c + start + j] += gi;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(slot) = self.slot(grads, *p) {
                        for (s, gi) in slot.iter_mut().zip(&g[offset..offset + len]) {
                            *s += gi;
                        }
                    }
                    offset += len;
                }
            }
            Op::LogSoftmaxNll {
                logits,
                targets,
                probs,
            } => {
                let vocab = self.value(*logits).cols();
                if let Some(slot) = self.slot(grads, *logits) {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..vocab {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            slot[i * vocab + j] += g[0] * (probs[i * vocab + j] - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulator for `var`, allocated on first use; `None` when `var` needs no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], var: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[var.0];
        if !node.needs_grad {
            return None;
        }
        Some(
            grads[var.0]
                .get_or_insert_with(|| vec![0.0; node.value.len()])
                .as_mut_slice(),
        )
    }
}
