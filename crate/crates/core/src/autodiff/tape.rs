use super::{AutodiffError, Tensor};
use crate::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operations the tape can record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind<S> {
    Add,
    Subtract,
    /// Elementwise product.
    Multiply,
    MatMul,
    Sigmoid,
    Relu,
    Ln,
    Exp,
    Sum,
    Mean,
    Scale(S),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Clip { lo: S, hi: S },
}

impl<S> OpKind<S> {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Subtract => "subtract",
            OpKind::Multiply => "multiply",
            OpKind::MatMul => "matmul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::Ln => "ln",
            OpKind::Exp => "exp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Scale(_) => "scale",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Clip { .. } => "clip",
        }
    }
}

/// How an operand of a binary elementwise op maps onto the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Spread {
    Full,
    /// `[1, c]` repeated over every output row.
    Row(usize),
    Scalar,
}

impl Spread {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Spread::Full => i,
            Spread::Row(c) => i % c,
            Spread::Scalar => 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Node<S> {
    op: Option<OpKind<S>>,
    inputs: Vec<usize>,
    spread: [Spread; 2],
    value: Tensor<S>,
    requires_grad: bool,
}

/// Single-use record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a reverse sweep is a valid topological order for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `var`; zeros when `var` does not reach the loss.
    pub fn wrt(&self, var: Var) -> Tensor<S> {
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes.get(var.0).map_or(&[][..], Vec::as_slice)),
        }
    }

    /// Appends the gradient of `var` to `out`, zero-filling when unreachable.
    pub fn extend_into(&self, var: Var, out: &mut Vec<S>) {
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => out.extend_from_slice(g.as_slice()),
            None => {
                let n: usize = self.shapes[var.0].iter().product();
                out.extend(std::iter::repeat_n(S::zero(), n));
            }
        }
    }

    pub fn is_reached(&self, var: Var) -> bool {
        matches!(self.grads.get(var.0), Some(Some(_)))
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, true)
    }

    /// Registers a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: None,
            inputs: Vec::new(),
            spread: [Spread::Full; 2],
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    fn node(&self, var: Var) -> Result<&Node<S>, AutodiffError> {
        self.nodes.get(var.0).ok_or(AutodiffError::UnknownVar(var.0))
    }

    /// Evaluates `op` on `inputs` and appends the result to the tape.
    pub fn record(&mut self, op: OpKind<S>, inputs: &[Var]) -> Result<Var, AutodiffError> {
        for v in inputs {
            self.node(*v)?;
        }
        let arity = match op {
            OpKind::Add | OpKind::Subtract | OpKind::Multiply | OpKind::MatMul => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        };
        if let Some(expected) = arity {
            if inputs.len() != expected {
                return Err(AutodiffError::Arity {
                    op: op.name(),
                    expected,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(AutodiffError::Arity {
                op: op.name(),
                expected: 1,
                got: 0,
            });
        }

        let mut spread = [Spread::Full; 2];
        let value = match op {
            OpKind::Add | OpKind::Subtract | OpKind::Multiply => {
                let a = &self.nodes[inputs[0].0].value;
                let b = &self.nodes[inputs[1].0].value;
                let (shape, sa, sb) = broadcast(op.name(), a, b)?;
                spread = [sa, sb];
                let n: usize = shape.iter().product();
                let (x, y) = (a.as_slice(), b.as_slice());
                let data: Vec<S> = match op {
                    OpKind::Add => (0..n).map(|i| x[sa.index(i)] + y[sb.index(i)]).collect(),
                    OpKind::Subtract => (0..n).map(|i| x[sa.index(i)] - y[sb.index(i)]).collect(),
                    _ => (0..n).map(|i| x[sa.index(i)] * y[sb.index(i)]).collect(),
                };
                Tensor::new(shape, data)?
            }
            OpKind::MatMul => {
                let a = &self.nodes[inputs[0].0].value;
                let b = &self.nodes[inputs[1].0].value;
                if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
                    return Err(shape_err(op.name(), &[a, b]));
                }
                matmul(a, b)
            }
            OpKind::Sigmoid => self.unary(inputs[0], |v| v.sigmoid()),
            OpKind::Relu => self.unary(inputs[0], |v| v.max(S::zero())),
            OpKind::Ln => self.unary(inputs[0], |v| v.ln()),
            OpKind::Exp => self.unary(inputs[0], |v| v.exp()),
            OpKind::Scale(c) => self.unary(inputs[0], |v| v * c),
            OpKind::Clip { lo, hi } => {
                if lo > hi {
                    return Err(AutodiffError::InvalidArgument(format!(
                        "clip bounds reversed: [{lo}, {hi}]"
                    )));
                }
                self.unary(inputs[0], |v| v.max(lo).min(hi))
            }
            OpKind::Sum => {
                let a = &self.nodes[inputs[0].0].value;
                Tensor::scalar(a.as_slice().iter().copied().sum())
            }
            OpKind::Mean => {
                let a = &self.nodes[inputs[0].0].value;
                if a.is_empty() {
                    return Err(shape_err(op.name(), &[a]));
                }
                let s: S = a.as_slice().iter().copied().sum();
                Tensor::scalar(s / S::lit(a.len() as f64))
            }
            OpKind::Concat { axis } => {
                let parts: Vec<&Tensor<S>> =
                    inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                concat(axis, &parts)?
            }
            OpKind::Slice { axis, start, end } => {
                let a = &self.nodes[inputs[0].0].value;
                slice(a, axis, start, end)?
            }
        };

        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op: Some(op),
            inputs: inputs.iter().map(|v| v.0).collect(),
            spread,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&self, input: Var, f: impl Fn(S) -> S) -> Tensor<S> {
        self.nodes[input.0].value.map(f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Subtract, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Multiply, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::MatMul, &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Sigmoid, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Relu, &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Ln, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Exp, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpKind::Mean, &[a])
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var, AutodiffError> {
        self.record(OpKind::Scale(c), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        self.record(OpKind::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, AutodiffError> {
        self.record(OpKind::Slice { axis, start, end }, &[a])
    }

    /// Single column `col` of a matrix, as an `n x 1` matrix.
    pub fn column(&mut self, a: Var, col: usize) -> Result<Var, AutodiffError> {
        self.slice(a, 1, col, col + 1)
    }

    pub fn clip(&mut self, a: Var, lo: S, hi: S) -> Result<Var, AutodiffError> {
        self.record(OpKind::Clip { lo, hi }, &[a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let one = self.constant(Tensor::scalar(S::one()));
        self.sub(one, a)
    }

    /// Sums each row of a matrix into an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let cols = self.value(a).cols();
        let ones = self.constant(Tensor::column(vec![S::one(); cols]));
        self.matmul(a, ones)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients are zero-initialised on every call and accumulate by
    /// addition when a value feeds several consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, AutodiffError> {
        let root = self.node(loss)?;
        if !root.value.is_scalar() {
            return Err(AutodiffError::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, op, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self.nodes[..=loss.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| self.nodes[id].requires_grad)
                    .map(|g| Tensor::new(self.nodes[id].value.shape().to_vec(), g))
                    .transpose()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node<S>, op: OpKind<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let wants = |i: usize| self.nodes[node.inputs[i]].requires_grad;
        let input = |i: usize| &self.nodes[node.inputs[i]].value;
        match op {
            OpKind::Add | OpKind::Subtract | OpKind::Multiply => {
                let [sa, sb] = node.spread;
                if wants(0) {
                    let mut d = vec![S::zero(); input(0).len()];
                    match op {
                        OpKind::Multiply => {
                            let b = input(1).as_slice();
                            for (i, gi) in g.iter().enumerate() {
                                d[sa.index(i)] += *gi * b[sb.index(i)];
                            }
                        }
                        _ => {
                            for (i, gi) in g.iter().enumerate() {
                                d[sa.index(i)] += *gi;
                            }
                        }
                    }
                    accumulate(grads, node.inputs[0], d);
                }
                if wants(1) {
                    let mut d = vec![S::zero(); input(1).len()];
                    match op {
                        OpKind::Multiply => {
                            let a = input(0).as_slice();
                            for (i, gi) in g.iter().enumerate() {
                                d[sb.index(i)] += *gi * a[sa.index(i)];
                            }
                        }
                        OpKind::Subtract => {
                            for (i, gi) in g.iter().enumerate() {
                                d[sb.index(i)] -= *gi;
                            }
                        }
                        _ => {
                            for (i, gi) in g.iter().enumerate() {
                                d[sb.index(i)] += *gi;
                            }
                        }
                    }
                    accumulate(grads, node.inputs[1], d);
                }
            }
            OpKind::MatMul => {
                let a = input(0);
                let b = input(1);
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                if wants(0) {
                    // dA = G B^T
                    let bs = b.as_slice();
                    let mut d = vec![S::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == S::zero() {
                                continue;
                            }
                            for p in 0..k {
                                d[i * k + p] += gij * bs[p * n + j];
                            }
                        }
                    }
                    accumulate(grads, node.inputs[0], d);
                }
                if wants(1) {
                    // dB = A^T G
                    let as_ = a.as_slice();
                    let mut d = vec![S::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = as_[i * k + p];
                            if aip == S::zero() {
                                continue;
                            }
                            for j in 0..n {
                                d[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    accumulate(grads, node.inputs[1], d);
                }
            }
            OpKind::Sigmoid => {
                let y = node.value.as_slice();
                let d = g.iter().zip(y).map(|(&gi, &yi)| gi * yi * (S::one() - yi)).collect();
                accumulate(grads, node.inputs[0], d);
            }
            OpKind::Relu => {
                let x = input(0).as_slice();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > S::zero() { gi } else { S::zero() })
                    .collect();
                accumulate(grads, node.inputs[0], d);
            }
            OpKind::Ln => {
                let x = input(0).as_slice();
                let d = g.iter().zip(x).map(|(&gi, &xi)| gi / xi).collect();
                accumulate(grads, node.inputs[0], d);
            }
            OpKind::Exp => {
                let y = node.value.as_slice();
                let d = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).collect();
                accumulate(grads, node.inputs[0], d);
            }
            OpKind::Scale(c) => {
                let d = g.iter().map(|&gi| gi * c).collect();
                accumulate(grads, node.inputs[0], d);
            }
            OpKind::Clip { lo, hi } => {
                let x = input(0).as_slice();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi >= lo && xi <= hi { gi } else { S::zero() })
                    .collect();
                accumulate(grads, node.inputs[0], d);
            }
            OpKind::Sum => {
                let n = input(0).len();
                accumulate(grads, node.inputs[0], vec![g[0]; n]);
            }
            OpKind::Mean => {
                let n = input(0).len();
                accumulate(grads, node.inputs[0], vec![g[0] / S::lit(n as f64); n]);
            }
            OpKind::Concat { axis } => {
                let out_cols = node.value.cols();
                let mut offset = 0;
                for (k, &src) in node.inputs.iter().enumerate() {
                    let part = input(k);
                    let (r, c) = (part.rows(), part.cols());
                    if self.nodes[src].requires_grad {
                        let mut d = Vec::with_capacity(r * c);
                        if axis == 0 {
                            d.extend_from_slice(&g[offset * out_cols..(offset + r) * out_cols]);
                        } else {
                            for i in 0..r {
                                let base = i * out_cols + offset;
                                d.extend_from_slice(&g[base..base + c]);
                            }
                        }
                        accumulate(grads, src, d);
                    }
                    offset += if axis == 0 { r } else { c };
                }
            }
            OpKind::Slice { axis, start, end } => {
                let a = input(0);
                let (r, c) = (a.rows(), a.cols());
                let mut d = vec![S::zero(); r * c];
                if axis == 0 {
                    d[start * c..end * c].copy_from_slice(g);
                } else {
                    let w = end - start;
                    for i in 0..r {
                        d[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                }
                accumulate(grads, node.inputs[0], d);
            }
        }
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], id: usize, d: Vec<S>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(d) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

fn shape_err<S: Scalar>(op: &'static str, parts: &[&Tensor<S>]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        shapes: parts.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn spread_of<S: Scalar>(t: &Tensor<S>, out: &[usize]) -> Option<Spread> {
    if t.shape() == out {
        Some(Spread::Full)
    } else if t.len() == 1 {
        Some(Spread::Scalar)
    } else if out.len() == 2 && t.rows() == 1 && t.cols() == out[1] && t.shape().len() <= 2 {
        Some(Spread::Row(out[1]))
    } else {
        None
    }
}

fn broadcast<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<(Vec<usize>, Spread, Spread), AutodiffError> {
    let a_wins = (a.len(), a.shape().len()) >= (b.len(), b.shape().len());
    let out = if a_wins { a.shape() } else { b.shape() }.to_vec();
    match (spread_of(a, &out), spread_of(b, &out)) {
        (Some(sa), Some(sb)) => Ok((out, sa, sb)),
        _ => Err(shape_err(op, &[a, b])),
    }
}

fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (x, y) = (a.as_slice(), b.as_slice());
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let xip = x[i * k + p];
            if xip == S::zero() {
                continue;
            }
            let row = &y[p * n..(p + 1) * n];
            for (o, &yv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o += xip * yv;
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul output shape")
}

fn concat<S: Scalar>(axis: usize, parts: &[&Tensor<S>]) -> Result<Tensor<S>, AutodiffError> {
    let err = || shape_err("concat", parts);
    if axis > 1 || parts.iter().any(|p| p.shape().len() != 2) {
        return Err(err());
    }
    if axis == 0 {
        let cols = parts[0].cols();
        if parts.iter().any(|p| p.cols() != cols) {
            return Err(err());
        }
        let rows = parts.iter().map(|p| p.rows()).sum();
        let data = parts.iter().flat_map(|p| p.as_slice().iter().copied()).collect();
        Tensor::matrix(rows, cols, data)
    } else {
        let rows = parts[0].rows();
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(err());
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row_slice(i));
            }
        }
        Tensor::matrix(rows, cols, data)
    }
}

fn slice<S: Scalar>(a: &Tensor<S>, axis: usize, start: usize, end: usize) -> Result<Tensor<S>, AutodiffError> {
    if a.shape().len() != 2 || axis > 1 {
        return Err(shape_err("slice", &[a]));
    }
    let (r, c) = (a.rows(), a.cols());
    let bound = if axis == 0 { r } else { c };
    if start >= end || end > bound {
        return Err(AutodiffError::InvalidSlice {
            axis,
            start,
            end,
            shape: a.shape().to_vec(),
        });
    }
    if axis == 0 {
        Tensor::matrix(end - start, c, a.as_slice()[start * c..end * c].to_vec())
    } else {
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&a.row_slice(i)[start..end]);
        }
        Tensor::matrix(r, end - start, data)
    }
}
