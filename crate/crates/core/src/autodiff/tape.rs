//! Wengert-list tape: every operation appends a node holding its forward value and
//! enough context to apply its local gradient rule during [`Tape::backward`].
//!
//! Nodes are only ever appended, so a node's inputs always precede it and the
//! reverse pass is a single sweep over the node list.

use crate::autodiff::tensor::{Tensor, EPS};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Negate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    Transpose(Var),
    Diag(Var),
    LogSumExpRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    TimeStep { x: Var, step: usize },
    Index { x: Var, at: usize },
    BceWithLogits { logits: Var, targets: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_str(t: &Tensor) -> String {
    format!("{:?}", t.shape())
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

    /// Records a tensor as an input. Its `requires_grad` flag decides whether
    /// backward populates a gradient for it; any gradient it carries is dropped.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.zero_grad();
        let needs_grad = tensor.requires_grad();
        self.push_node(tensor, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn variable(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push_node(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: value.with_requires_grad(needs_grad),
            op,
            needs_grad,
        });
        Var(id)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let value = Tensor::new(shape, data).expect("op produced inconsistent shape");
        self.push_node(value, op, needs_grad)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::dim(op, format!("expected a matrix, got {other:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.dims2("matmul", a)?;
        let (k2, c) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{} x {}",
                    shape_str(self.value(a)),
                    shape_str(self.value(b))
                ),
            ));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), r, k, c);
        Ok(self.push(vec![r, c], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(
                "elementwise",
                format!("{op:?} of {} and {}", shape_str(ta), shape_str(tb)),
            ));
        }
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(shape, out, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let t = self.value(x);
        if op == UnaryOp::Log {
            if let Some(bad) = t.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("argument {bad} is not strictly positive"),
                });
            }
        }
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Log => f64::ln,
            UnaryOp::Negate => |v| -v,
        };
        let out = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(shape, out, Op::Unary(op, x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Tanh, x).expect("tanh is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Exp, x).expect("exp is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Negate, x).expect("negate is total")
    }

    /// `x[r×c] + b[c]` with the bias repeated over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims2("add_bias", x)?;
        let tb = self.value(b);
        if tb.numel() != c || tb.ndim() != 1 {
            return Err(Error::dim(
                "add_bias",
                format!("{} + {}", shape_str(self.value(x)), shape_str(tb)),
            ));
        }
        let bias = tb.data();
        let out = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(a, b)| a + b))
            .collect();
        Ok(self.push(vec![r, c], out, Op::AddBias(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push(shape, out, Op::Scale(x, factor), &[x])
    }

    /// Multiplies every entry of `x` by the one-element node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::dim(
                "mul_scalar",
                format!("factor must be a scalar, got {}", shape_str(self.value(s))),
            ));
        }
        let factor = self.item(s);
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(shape, out, Op::MulScalar(x, s), &[x, s]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(vec![1], vec![total], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(vec![1], vec![m], Op::Mean(x), &[x])
    }

    /// Sum of a non-empty list of same-shaped nodes.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Softmax of a 1-D tensor, computed with max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() != 1 {
            return Err(Error::dim(
                "softmax",
                format!("expected a vector, got {}", shape_str(t)),
            ));
        }
        let out = softmax_raw(t.data());
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Softmax(x), &[x]))
    }

    /// Scales each row to unit Euclidean norm. A 1-D input is a single row.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (_, c) = t
            .as_matrix_dims()
            .ok_or_else(|| Error::dim("normalize_rows", shape_str(t)))?;
        let mut norms = Vec::new();
        let mut out = Vec::with_capacity(t.numel());
        for (i, row) in t.data().chunks(c).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > EPS) {
                return Err(Error::Degenerate(format!(
                    "row {i} has norm {norm:e}, below {EPS:e}"
                )));
            }
            out.extend(row.iter().map(|v| v / norm));
            norms.push(norm);
        }
        let shape = t.shape().to_vec();
        Ok(self.push(shape, out, Op::NormalizeRows { x, norms }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", x)?;
        let d = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose(x), &[x]))
    }

    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("diag", x)?;
        if r != c {
            return Err(Error::dim("diag", format!("not square: [{r}, {c}]")));
        }
        let d = self.value(x).data();
        let out = (0..r).map(|i| d[i * c + i]).collect();
        Ok(self.push(vec![r], out, Op::Diag(x), &[x]))
    }

    /// Row-wise `log Σ_j exp(x_ij)`, stabilized by the row maximum.
    /// A 1-D input is a single row.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t
            .as_matrix_dims()
            .ok_or_else(|| Error::dim("logsumexp_rows", shape_str(t)))?;
        let out = self
            .value(x)
            .data()
            .chunks(c)
            .map(logsumexp_raw)
            .collect();
        Ok(self.push(vec![r], out, Op::LogSumExpRows(x), &[x]))
    }

    /// Row-wise concatenation of matrices sharing a row count.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Contract("concat_cols of an empty list".into()));
        }
        let mut dims = Vec::with_capacity(xs.len());
        for &x in xs {
            dims.push(self.dims2("concat_cols", x)?);
        }
        let rows = dims[0].0;
        if let Some((i, _)) = dims.iter().enumerate().find(|(_, d)| d.0 != rows) {
            return Err(Error::dim(
                "concat_cols",
                format!(
                    "input 0 is {} but input {i} is {}",
                    shape_str(self.value(xs[0])),
                    shape_str(self.value(xs[i]))
                ),
            ));
        }
        let width: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for (&x, &(_, c)) in xs.iter().zip(&dims) {
                out.extend_from_slice(&self.value(x).data()[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(vec![rows, width], out, Op::ConcatCols(xs.to_vec()), xs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if width == 0 || start + width > c {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{} of [{r}, {c}]", start + width),
            ));
        }
        let d = self.value(x).data();
        let out = (0..r)
            .flat_map(|i| d[i * c + start..i * c + start + width].iter().copied())
            .collect();
        Ok(self.push(vec![r, width], out, Op::SliceCols { x, start }, &[x]))
    }

    /// Extracts step `t` of an `[N, T, d]` sequence batch as an `[N, d]` matrix.
    pub fn time_step(&mut self, x: Var, step: usize) -> Result<Var> {
        let t = self.value(x);
        let &[n, steps, d] = t.shape() else {
            return Err(Error::dim(
                "time_step",
                format!("expected [N, T, d], got {}", shape_str(t)),
            ));
        };
        if step >= steps {
            return Err(Error::dim(
                "time_step",
                format!("step {step} of a {steps}-step sequence"),
            ));
        }
        let data = t.data();
        let out = (0..n)
            .flat_map(|i| {
                let base = (i * steps + step) * d;
                data[base..base + d].iter().copied()
            })
            .collect();
        Ok(self.push(vec![n, d], out, Op::TimeStep { x, step }, &[x]))
    }

    /// One element of a tensor (flat index) as a scalar node.
    pub fn index(&mut self, x: Var, at: usize) -> Result<Var> {
        let t = self.value(x);
        if at >= t.numel() {
            return Err(Error::dim(
                "index",
                format!("index {at} of {}", shape_str(t)),
            ));
        }
        let v = t.data()[at];
        Ok(self.push(vec![1], vec![v], Op::Index { x, at }, &[x]))
    }

    /// Mean over all elements of `w_e · BCE(σ(z_e), y_e)`, evaluated in the
    /// overflow-free form `max(z,0) − z·y + log(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if targets.len() != z.numel() || weights.len() != z.numel() {
            return Err(Error::dim(
                "bce_with_logits",
                format!(
                    "logits {} with {} targets and {} weights",
                    shape_str(z),
                    targets.len(),
                    weights.len()
                ),
            ));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &y), &w)| w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()))
            .sum();
        let m = total / z.numel() as f64;
        Ok(self.push(
            vec![1],
            vec![m],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            &[logits],
        ))
    }

    /// Cosine similarity of two vectors of equal length, as a scalar node.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).ndim() != 1 || self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "cosine_similarity",
                format!("{} vs {}", shape_str(self.value(a)), shape_str(self.value(b))),
            ));
        }
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        let prod = self.mul(na, nb)?;
        Ok(self.sum(prod))
    }

    /// Clears every gradient slot and re-arms [`Tape::backward`].
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar `loss`, accumulating into the gradient slot of
    /// every node that depends on a `requires_grad` leaf.
    ///
    /// A second call without an intervening [`Tape::zero_grads`] is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; call zero_grads first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}",
                shape_str(self.value(loss))
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut send = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (r, k) = (ta.shape()[0], ta.shape()[1]);
                let c = tb.shape()[1];
                if self.nodes[a.0].needs_grad {
                    // dA = G Bᵀ
                    let mut da = vec![0.0; r * k];
                    for row in 0..r {
                        for col in 0..c {
                            let gv = g[row * c + col];
                            if gv == 0.0 {
                                continue;
                            }
                            for inner in 0..k {
                                da[row * k + inner] += gv * tb.data()[inner * c + col];
                            }
                        }
                    }
                    send(*a, da);
                }
                if self.nodes[b.0].needs_grad {
                    // dB = Aᵀ G
                    let mut db = vec![0.0; k * c];
                    for row in 0..r {
                        for inner in 0..k {
                            let av = ta.data()[row * k + inner];
                            if av == 0.0 {
                                continue;
                            }
                            for col in 0..c {
                                db[inner * c + col] += av * g[row * c + col];
                            }
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Binary(op, a, b) => match op {
                BinaryOp::Add => {
                    send(*a, g.to_vec());
                    send(*b, g.to_vec());
                }
                BinaryOp::Sub => {
                    send(*a, g.to_vec());
                    send(*b, g.iter().map(|v| -v).collect());
                }
                BinaryOp::Mul => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    send(*a, g.iter().zip(vb).map(|(g, b)| g * b).collect());
                    send(*b, g.iter().zip(va).map(|(g, a)| g * a).collect());
                }
            },
            Op::Unary(op, x) => {
                let xv = self.value(*x).data();
                let dx = match op {
                    UnaryOp::Sigmoid => g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect(),
                    UnaryOp::Tanh => g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect(),
                    UnaryOp::Exp => g.iter().zip(y).map(|(g, e)| g * e).collect(),
                    UnaryOp::Log => g.iter().zip(xv).map(|(g, x)| g / x).collect(),
                    UnaryOp::Negate => g.iter().map(|g| -g).collect(),
                };
                send(*x, dx);
            }
            Op::AddBias(x, b) => {
                let c = self.value(*b).numel();
                let mut db = vec![0.0; c];
                for row in g.chunks(c) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                send(*x, g.to_vec());
                send(*b, db);
            }
            Op::Scale(x, factor) => send(*x, g.iter().map(|g| g * factor).collect()),
            Op::MulScalar(x, s) => {
                let factor = self.item(*s);
                let xv = self.value(*x).data();
                send(*x, g.iter().map(|g| g * factor).collect());
                send(*s, vec![g.iter().zip(xv).map(|(g, x)| g * x).sum()]);
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Softmax(x) => {
                let dot: f64 = g.iter().zip(y).map(|(g, s)| g * s).sum();
                send(*x, g.iter().zip(y).map(|(g, s)| s * (g - dot)).collect());
            }
            Op::NormalizeRows { x, norms } => {
                let c = y.len() / norms.len();
                let mut dx = Vec::with_capacity(y.len());
                for (r, norm) in norms.iter().enumerate() {
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, y)| (g - y * dot) / norm));
                }
                send(*x, dx);
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[j * r + i] = g[i * c + j];
                    }
                }
                send(*x, dx);
            }
            Op::Diag(x) => {
                let n = g.len();
                let mut dx = vec![0.0; n * n];
                for (k, gv) in g.iter().enumerate() {
                    dx[k * n + k] = *gv;
                }
                send(*x, dx);
            }
            Op::LogSumExpRows(x) => {
                let xv = self.value(*x).data();
                let c = xv.len() / g.len();
                let dx = xv
                    .chunks(c)
                    .zip(g.iter().zip(y))
                    .flat_map(|(row, (gr, lse))| row.iter().map(move |v| gr * (v - lse).exp()))
                    .collect();
                send(*x, dx);
            }
            Op::ConcatCols(xs) => {
                let width = node.value.shape()[1];
                let rows = node.value.shape()[0];
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).shape()[1];
                    let dx = (0..rows)
                        .flat_map(|r| g[r * width + offset..r * width + offset + c].iter().copied())
                        .collect();
                    send(x, dx);
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let w = node.value.shape()[1];
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                send(*x, dx);
            }
            Op::TimeStep { x, step } => {
                let &[n, steps, d] = self.value(*x).shape() else {
                    unreachable!("time_step input validated at record time")
                };
                let mut dx = vec![0.0; n * steps * d];
                for i in 0..n {
                    let base = (i * steps + step) * d;
                    dx[base..base + d].copy_from_slice(&g[i * d..(i + 1) * d]);
                }
                send(*x, dx);
            }
            Op::Index { x, at } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                dx[*at] = g[0];
                send(*x, dx);
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                let z = self.value(*logits).data();
                let m = z.len() as f64;
                let dx = z
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&z, &t), &w)| g[0] * w * (sigmoid(z) - t) / m)
                    .collect();
                send(*logits, dx);
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for inner in 0..k {
            let av = a[i * k + inner];
            let b_row = &b[inner * c..(inner + 1) * c];
            out_row.iter_mut().zip(b_row).for_each(|(o, b)| *o += av * b);
        }
    }
    out
}

pub(crate) fn softmax_raw(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn logsumexp_raw(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2));
        let a = tape.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let ia = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(ia).data(), tape.value(a).data());

        let ones = tape.constant(m(&[vec![1.0], vec![1.0]]));
        let out = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.shape(out), &[2, 1]);
        assert_eq!(tape.value(out).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        let t = tape.tanh(z);
        assert_eq!(tape.item(s), 0.5);
        assert_eq!(tape.item(t), 0.0);
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 5]).unwrap());
        let s = tape.softmax(x).unwrap();
        for v in tape.value(s).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let big = tape.constant(Tensor::vector(vec![1000.0, 0.0]).unwrap());
        let s = tape.softmax(big).unwrap();
        let d = tape.value(s).data();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d[0] - 1.0).abs() < 1e-12 && d[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_matrix() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.softmax(x).is_err());
    }

    #[test]
    fn cosine_similarity_cases() {
        let mut tape = Tape::new();
        let mut cos = |a: Vec<f64>, b: Vec<f64>| {
            let a = tape.constant(Tensor::vector(a).unwrap());
            let b = tape.constant(Tensor::vector(b).unwrap());
            let c = tape.cosine_similarity(a, b);
            c.map(|c| tape.item(c))
        };
        assert!((cos(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cos(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap(), 0.0);
        let v = cos(vec![1.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cos(vec![0.0, 0.0], vec![1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn backward_linear_and_square() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_nonscalar_and_second_run() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
        tape.zero_grads();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![2.0]).unwrap());
        let c = tape.constant(Tensor::vector(vec![5.0]).unwrap());
        let p = tape.mul(x, c).unwrap();
        let l = tape.sum(p);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[5.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn bce_with_logits_is_stable() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![800.0, -800.0]).unwrap());
        let l = tape.bce_with_logits(z, &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(tape.item(l) < 1e-300);
        let l = tape.bce_with_logits(z, &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((tape.item(l) - 800.0).abs() < 1e-9);
    }
}
