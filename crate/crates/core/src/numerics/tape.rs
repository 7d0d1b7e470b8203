use super::tensor::{axpy, dot, matvec, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operations the tape knows how to differentiate.
///
/// Elementwise binary ops require identical shapes. `MatMul` contracts a
/// 2-D left operand with a 1-D or 2-D right operand. `Concat`, `Slice`,
/// `LogSoftmax` and `Pick` work on 1-D vectors; `Gather` selects a row of a
/// 2-D table.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Ln,
    Sqrt,
    Scale(f64),
    Offset(f64),
    Concat,
    Slice { start: usize, len: usize },
    Sum,
    Gather { row: usize },
    LogSoftmax,
    Pick { index: usize },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::MatMul => "matmul",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Sqrt => "sqrt",
            OpKind::Scale(_) => "scale",
            OpKind::Offset(_) => "offset",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Sum => "sum",
            OpKind::Gather { .. } => "gather",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Pick { .. } => "pick",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::MatMul => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

struct Node {
    /// `None` marks a leaf (parameter or constant input).
    kind: Option<OpKind>,
    args: Vec<NodeId>,
    value: Tensor,
}

/// Eager forward evaluation with a recorded Wengert list for reverse mode.
///
/// Nodes are append-only, so operands always precede their consumers and
/// several computations (e.g. beam hypotheses) may branch off shared nodes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(None, Vec::new(), value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, kind: Option<OpKind>, args: Vec<NodeId>, value: Tensor) -> NodeId {
        self.nodes.push(Node { kind, args, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Evaluates `kind` on `args`, records the node, and returns its id.
    pub fn apply(&mut self, kind: OpKind, args: &[NodeId]) -> Result<NodeId> {
        if let Some(n) = kind.arity() {
            if args.len() != n {
                return Err(Error::Invalid(format!(
                    "{} takes {n} operand(s), got {}",
                    kind.name(),
                    args.len()
                )));
            }
        } else if args.is_empty() {
            return Err(Error::Invalid(format!("{} needs operands", kind.name())));
        }
        if let Some(bad) = args.iter().find(|a| a.0 >= self.nodes.len()) {
            return Err(Error::OutOfRange { what: "tape", index: bad.0, len: self.nodes.len() });
        }
        let value = self.forward(&kind, args)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        Ok(self.push(Some(kind), args.to_vec(), value))
    }

    fn forward(&self, kind: &OpKind, args: &[NodeId]) -> Result<Tensor> {
        let v = |i: usize| &self.nodes[args[i].0].value;
        let name = kind.name();
        let binary = |f: fn(f64, f64) -> f64| -> Result<Tensor> {
            let (a, b) = (v(0), v(1));
            if a.shape() != b.shape() {
                return Err(Error::shape(name, &[a.shape(), b.shape()]));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok(Tensor::from_parts(a.shape().to_vec(), data))
        };
        let vector = |t: &Tensor| -> Result<()> {
            if t.shape().len() != 1 {
                return Err(Error::shape(name, &[t.shape()]));
            }
            Ok(())
        };
        match kind {
            OpKind::Add => binary(|x, y| x + y),
            OpKind::Sub => binary(|x, y| x - y),
            OpKind::Mul => binary(|x, y| x * y),
            OpKind::Div => binary(|x, y| x / y),
            OpKind::MatMul => {
                let (a, b) = (v(0), v(1));
                let (m, k) = match a.shape() {
                    &[m, k] => (m, k),
                    _ => return Err(Error::shape(name, &[a.shape(), b.shape()])),
                };
                match b.shape() {
                    &[kb] if kb == k => {
                        let mut out = vec![0.0; m];
                        matvec(a.data(), k, b.data(), &mut out);
                        Ok(Tensor::from_parts(vec![m], out))
                    }
                    &[kb, n] if kb == k => {
                        let mut out = vec![0.0; m * n];
                        for i in 0..m {
                            let arow = &a.data()[i * k..(i + 1) * k];
                            let orow = &mut out[i * n..(i + 1) * n];
                            for (j, &aij) in arow.iter().enumerate() {
                                axpy(aij, &b.data()[j * n..(j + 1) * n], orow);
                            }
                        }
                        Ok(Tensor::from_parts(vec![m, n], out))
                    }
                    _ => Err(Error::shape(name, &[a.shape(), b.shape()])),
                }
            }
            OpKind::Tanh => Ok(v(0).map(f64::tanh)),
            OpKind::Sigmoid => Ok(v(0).map(sigmoid)),
            OpKind::Softplus => Ok(v(0).map(softplus)),
            OpKind::Exp => Ok(v(0).map(f64::exp)),
            OpKind::Ln => Ok(v(0).map(f64::ln)),
            OpKind::Sqrt => Ok(v(0).map(f64::sqrt)),
            OpKind::Scale(c) => Ok(v(0).map(|x| c * x)),
            OpKind::Offset(c) => Ok(v(0).map(|x| x + c)),
            OpKind::Concat => {
                let mut data = Vec::new();
                for i in 0..args.len() {
                    vector(v(i))?;
                    data.extend_from_slice(v(i).data());
                }
                Ok(Tensor::from_parts(vec![data.len()], data))
            }
            OpKind::Slice { start, len } => {
                let a = v(0);
                vector(a)?;
                if *len == 0 || start + len > a.len() {
                    return Err(Error::shape(name, &[a.shape(), &[*start, *len]]));
                }
                Ok(Tensor::from_parts(vec![*len], a.data()[*start..start + len].to_vec()))
            }
            OpKind::Sum => Ok(Tensor::scalar(v(0).data().iter().sum())),
            OpKind::Gather { row } => {
                let a = v(0);
                if a.shape().len() != 2 {
                    return Err(Error::shape(name, &[a.shape()]));
                }
                if *row >= a.rows() {
                    return Err(Error::OutOfRange { what: "table row", index: *row, len: a.rows() });
                }
                Ok(Tensor::from_parts(vec![a.cols()], a.row(*row).to_vec()))
            }
            OpKind::LogSoftmax => {
                let a = v(0);
                vector(a)?;
                Ok(Tensor::from_parts(vec![a.len()], log_softmax(a.data())))
            }
            OpKind::Pick { index } => {
                let a = v(0);
                vector(a)?;
                if *index >= a.len() {
                    return Err(Error::OutOfRange { what: "vector", index: *index, len: a.len() });
                }
                Ok(Tensor::scalar(a.data()[*index]))
            }
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Div, &[a, b])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sigmoid, &[a])
    }
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Softplus, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp, &[a])
    }
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Ln, &[a])
    }
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sqrt, &[a])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(c), &[a])
    }
    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::Offset(c), &[a])
    }
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::Concat, parts)
    }
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(OpKind::Slice { start, len }, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }
    pub fn gather(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        self.apply(OpKind::Gather { row }, &[table])
    }
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::LogSoftmax, &[a])
    }
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        self.apply(OpKind::Pick { index }, &[a])
    }

    /// `w x + b`
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let wx = self.matmul(w, x)?;
        self.add(wx, b)
    }

    /// Sums a non-empty list of same-shaped nodes left to right.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) =
            terms.split_first().ok_or_else(|| Error::Invalid("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::new();
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(Tensor::from_parts(root_value.shape().to_vec(), vec![1.0]));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(kind) = &node.kind else { continue };
            let Some(g) = adj[i].take() else { continue };
            self.propagate(kind, node, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Gradients { adj })
    }

    fn propagate(&self, kind: &OpKind, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let args = &node.args;
        let val = |id: NodeId| &self.nodes[id.0].value;
        let y = node.value.data();
        let gd = g.data();
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            let slot = adj[id.0].get_or_insert_with(|| Tensor::zeros(val(id).shape()));
            f(slot.data_mut());
        };
        let elementwise = |d: &mut dyn FnMut(usize) -> f64| -> Vec<f64> {
            (0..gd.len()).map(|k| gd[k] * d(k)).collect()
        };
        match kind {
            OpKind::Add | OpKind::Sub => {
                let sign = if *kind == OpKind::Sub { -1.0 } else { 1.0 };
                acc(args[0], &mut |a| axpy(1.0, gd, a));
                acc(args[1], &mut |b| axpy(sign, gd, b));
            }
            OpKind::Mul => {
                let (x0, x1) = (val(args[0]).data(), val(args[1]).data());
                acc(args[0], &mut |a| a.iter_mut().zip(gd.iter().zip(x1)).for_each(|(s, (g, x))| *s += g * x));
                acc(args[1], &mut |b| b.iter_mut().zip(gd.iter().zip(x0)).for_each(|(s, (g, x))| *s += g * x));
            }
            OpKind::Div => {
                let (x0, x1) = (val(args[0]).data(), val(args[1]).data());
                acc(args[0], &mut |a| a.iter_mut().enumerate().for_each(|(k, s)| *s += gd[k] / x1[k]));
                acc(args[1], &mut |b| {
                    b.iter_mut().enumerate().for_each(|(k, s)| *s -= gd[k] * x0[k] / (x1[k] * x1[k]))
                });
            }
            OpKind::MatMul => {
                let (a, b) = (val(args[0]), val(args[1]));
                let k = a.cols();
                if b.shape().len() == 1 {
                    // da += g b^T ; db += a^T g
                    acc(args[0], &mut |da| {
                        for (row, &gi) in da.chunks_exact_mut(k).zip(gd) {
                            if gi != 0.0 {
                                axpy(gi, b.data(), row);
                            }
                        }
                    });
                    acc(args[1], &mut |db| {
                        for (arow, &gi) in a.data().chunks_exact(k).zip(gd) {
                            if gi != 0.0 {
                                axpy(gi, arow, db);
                            }
                        }
                    });
                } else {
                    let n = b.cols();
                    acc(args[0], &mut |da| {
                        for (i, row) in da.chunks_exact_mut(k).enumerate() {
                            let grow = &gd[i * n..(i + 1) * n];
                            for (j, s) in row.iter_mut().enumerate() {
                                *s += dot(grow, &b.data()[j * n..(j + 1) * n]);
                            }
                        }
                    });
                    acc(args[1], &mut |db| {
                        for (i, arow) in a.data().chunks_exact(k).enumerate() {
                            let grow = &gd[i * n..(i + 1) * n];
                            for (j, &aij) in arow.iter().enumerate() {
                                axpy(aij, grow, &mut db[j * n..(j + 1) * n]);
                            }
                        }
                    });
                }
            }
            OpKind::Tanh => {
                let d = elementwise(&mut |k| 1.0 - y[k] * y[k]);
                acc(args[0], &mut |a| axpy(1.0, &d, a));
            }
            OpKind::Sigmoid => {
                let d = elementwise(&mut |k| y[k] * (1.0 - y[k]));
                acc(args[0], &mut |a| axpy(1.0, &d, a));
            }
            OpKind::Softplus => {
                let x = val(args[0]).data();
                let d = elementwise(&mut |k| sigmoid(x[k]));
                acc(args[0], &mut |a| axpy(1.0, &d, a));
            }
            OpKind::Exp => {
                let d = elementwise(&mut |k| y[k]);
                acc(args[0], &mut |a| axpy(1.0, &d, a));
            }
            OpKind::Ln => {
                let x = val(args[0]).data();
                let d = elementwise(&mut |k| 1.0 / x[k]);
                acc(args[0], &mut |a| axpy(1.0, &d, a));
            }
            OpKind::Sqrt => {
                let d = elementwise(&mut |k| 0.5 / y[k]);
                acc(args[0], &mut |a| axpy(1.0, &d, a));
            }
            OpKind::Scale(c) => acc(args[0], &mut |a| axpy(*c, gd, a)),
            OpKind::Offset(_) => acc(args[0], &mut |a| axpy(1.0, gd, a)),
            OpKind::Concat => {
                let mut off = 0;
                for &id in args {
                    let n = val(id).len();
                    acc(id, &mut |a| axpy(1.0, &gd[off..off + n], a));
                    off += n;
                }
            }
            OpKind::Slice { start, len } => {
                acc(args[0], &mut |a| axpy(1.0, gd, &mut a[*start..start + len]))
            }
            OpKind::Sum => {
                let g0 = gd[0];
                acc(args[0], &mut |a| a.iter_mut().for_each(|s| *s += g0));
            }
            OpKind::Gather { row } => {
                let c = val(args[0]).cols();
                acc(args[0], &mut |a| axpy(1.0, gd, &mut a[row * c..(row + 1) * c]));
            }
            OpKind::LogSoftmax => {
                let total: f64 = gd.iter().sum();
                acc(args[0], &mut |a| {
                    for (k, s) in a.iter_mut().enumerate() {
                        *s += gd[k] - y[k].exp() * total;
                    }
                });
            }
            OpKind::Pick { index } => {
                let g0 = gd[0];
                acc(args[0], &mut |a| a[*index] += g0);
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `id`, or `None` when the node does not reach the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.adj.get(id.0).and_then(Option::as_ref)
    }

    /// Adjoint of `id`, zero-filled when unreachable.
    pub fn get_or_zero(&self, tape: &Tape, id: NodeId) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(id).shape()))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
