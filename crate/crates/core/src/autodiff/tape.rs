use std::collections::HashMap;

use crate::error::TensorError;

use super::tensor::numel;
use super::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operations the tape knows how to differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind<T> {
    /// Elementwise, or scalar with tensor.
    Add,
    Sub,
    Mul,
    /// `[m, k] x [k, n]`.
    MatMul,
    /// Concatenate along the last axis.
    ConcatCols,
    /// Stack rank-2 inputs with equal widths.
    ConcatRows,
    Relu,
    Sigmoid,
    /// Softmax over the last axis, shifted by the row max.
    Softmax,
    Ln,
    Exp,
    /// Mean over the leading (batch) axis.
    BatchMean,
    /// Mean over every element.
    Mean,
    Sum,
    SumSquares,
    /// `[m, n] + [n]` row-wise bias.
    AddBias,
    Transpose,
    /// Subtract each column's mean over the batch.
    CenterCols,
    /// Scale each row to unit L2 norm, `x / sqrt(|x|^2 + eps)`.
    NormalizeRows { eps: T },
    SliceRows { start: usize, end: usize },
    SliceCols { start: usize, end: usize },
    /// Repeat the columns `times` times horizontally.
    TileCols { times: usize },
    Scale(T),
    /// Identity forward; multiplies the incoming gradient by the factor.
    ScaleGrad(T),
    /// Batch-mean of `-sum(target * log_softmax(logits))`; inputs `(logits, targets)`.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Option<OpKind<T>>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Linear record of a forward computation, replayed in reverse for gradients.
///
/// Leaves are copies of the tensors handed in; gradients come back through
/// [`Gradients`] or [`Tape::gradients`] and are written into parameters by the
/// caller.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    grads: HashMap<Var, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(&var).map(Vec::as_slice)
    }

    /// Accumulate the gradient for `var` (if any reached it) into `tensor.grad`.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor<T>) -> Result<(), TensorError> {
        match self.grads.get(&var) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&vec![T::zero(); tensor.len()]),
        }
    }
}

fn is_scalar(shape: &[usize]) -> bool {
    numel(shape) == 1
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn rank2(op: &'static str, shape: &[usize]) -> Result<(usize, usize), TensorError> {
    if shape.len() != 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        });
    }
    Ok((shape[0], shape[1]))
}

/// Rows and width of the last axis, treating rank 0/1 as a single row.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (numel(&shape[..shape.len() - 1]), shape[shape.len() - 1]),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_rows<T: Real>(x: &[T], rows: usize, cols: usize, out: &mut [T]) {
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (v - max).exp();
            total = total + *o;
        }
        for o in &mut out[r * cols..(r + 1) * cols] {
            *o = *o / total;
        }
    }
}

fn log_softmax_rows<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

fn cast<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("usize fits in float")
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf; it participates in gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.push_leaf(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            tensor.requires_grad(),
        )
    }

    /// Leaf that gradients are taken with respect to.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        self.push_leaf(tensor.shape().to_vec(), tensor.data().to_vec(), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let shape = tensor.shape().to_vec();
        self.push_leaf(shape, tensor.into_data(), false)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.push_leaf(Vec::new(), vec![value], false)
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: None,
            inputs: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn data(&self, var: Var) -> &[T] {
        &self.nodes[var.0].value
    }

    pub fn value(&self, var: Var) -> Tensor<T> {
        let node = &self.nodes[var.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape is consistent")
    }

    pub fn item(&self, var: Var) -> Result<T, TensorError> {
        let node = &self.nodes[var.0];
        if node.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "expected a scalar, got shape {:?}",
                node.shape
            )));
        }
        Ok(node.value[0])
    }

    /// Evaluate `kind` on `inputs` and record it.
    pub fn apply(&mut self, kind: OpKind<T>, inputs: &[Var]) -> Result<Var, TensorError> {
        let (shape, value) = self.forward(&kind, inputs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op: Some(kind),
            inputs: inputs.to_vec(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn arity(kind: &OpKind<T>, inputs: &[Var]) -> Result<(), TensorError> {
        use OpKind::*;
        let want = match kind {
            Add | Sub | Mul | MatMul | AddBias | SoftmaxCrossEntropy => Some(2),
            ConcatCols | ConcatRows => None,
            _ => Some(1),
        };
        match want {
            Some(n) if inputs.len() != n => Err(TensorError::Contract(format!(
                "{kind:?} takes {n} input(s), got {}",
                inputs.len()
            ))),
            None if inputs.is_empty() => Err(TensorError::Contract(format!(
                "{kind:?} needs at least one input"
            ))),
            _ => Ok(()),
        }
    }

    fn forward(&self, kind: &OpKind<T>, inputs: &[Var]) -> Result<(Vec<usize>, Vec<T>), TensorError> {
        use OpKind::*;
        Self::arity(kind, inputs)?;
        let node = |i: usize| &self.nodes[inputs[i].0];
        let unary = |f: &dyn Fn(T) -> T| {
            let a = node(0);
            (a.shape.clone(), a.value.iter().map(|&v| f(v)).collect::<Vec<T>>())
        };
        Ok(match kind {
            Add | Sub | Mul => {
                let (a, b) = (node(0), node(1));
                let f = |x: T, y: T| match kind {
                    Add => x + y,
                    Sub => x - y,
                    _ => x * y,
                };
                if a.shape == b.shape {
                    let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
                    (a.shape.clone(), v)
                } else if is_scalar(&b.shape) && !is_scalar(&a.shape) {
                    let y = b.value[0];
                    (a.shape.clone(), a.value.iter().map(|&x| f(x, y)).collect())
                } else if is_scalar(&a.shape) && !is_scalar(&b.shape) {
                    let x = a.value[0];
                    (b.shape.clone(), b.value.iter().map(|&y| f(x, y)).collect())
                } else if is_scalar(&a.shape) && is_scalar(&b.shape) {
                    let shape = if a.shape.len() >= b.shape.len() { &a.shape } else { &b.shape };
                    (shape.clone(), vec![f(a.value[0], b.value[0])])
                } else {
                    return Err(mismatch("elementwise", &a.shape, &b.shape));
                }
            }
            MatMul => {
                let (a, b) = (node(0), node(1));
                let (m, k) = rank2("matmul", &a.shape)?;
                let (k2, n) = rank2("matmul", &b.shape)?;
                if k != k2 {
                    return Err(mismatch("matmul", &a.shape, &b.shape));
                }
                let mut out = vec![T::zero(); m * n];
                T::gemm(m, k, n, &a.value, false, &b.value, false, T::zero(), &mut out);
                (vec![m, n], out)
            }
            AddBias => {
                let (a, b) = (node(0), node(1));
                let (m, n) = rank2("add_bias", &a.shape)?;
                if b.shape != [n] {
                    return Err(mismatch("add_bias", &a.shape, &b.shape));
                }
                let mut out = a.value.clone();
                for r in 0..m {
                    for (o, &bias) in out[r * n..(r + 1) * n].iter_mut().zip(&b.value) {
                        *o = *o + bias;
                    }
                }
                (vec![m, n], out)
            }
            ConcatCols => {
                let first = node(0);
                let lead = &first.shape[..first.shape.len().saturating_sub(1)];
                if first.shape.is_empty() {
                    return Err(TensorError::Rank {
                        op: "concat_cols",
                        expected: 1,
                        shape: vec![],
                    });
                }
                let mut widths = Vec::with_capacity(inputs.len());
                for i in 0..inputs.len() {
                    let s = &node(i).shape;
                    if s.len() != first.shape.len() || &s[..s.len() - 1] != lead {
                        return Err(mismatch("concat_cols", &first.shape, s));
                    }
                    widths.push(s[s.len() - 1]);
                }
                let rows = numel(lead);
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (i, &w) in widths.iter().enumerate() {
                        out.extend_from_slice(&node(i).value[r * w..(r + 1) * w]);
                    }
                }
                let mut shape = lead.to_vec();
                shape.push(total);
                (shape, out)
            }
            ConcatRows => {
                let (_, cols) = rank2("concat_rows", &node(0).shape)?;
                let mut rows = 0;
                let mut out = Vec::new();
                for i in 0..inputs.len() {
                    let (r, c) = rank2("concat_rows", &node(i).shape)?;
                    if c != cols {
                        return Err(mismatch("concat_rows", &node(0).shape, &node(i).shape));
                    }
                    rows += r;
                    out.extend_from_slice(&node(i).value);
                }
                (vec![rows, cols], out)
            }
            // NaN passes through so a poisoned network is caught, not masked
            Relu => unary(&|v| if v > T::zero() || v.is_nan() { v } else { T::zero() }),
            Sigmoid => unary(&sigmoid),
            Exp => unary(&|v| v.exp()),
            Scale(c) => {
                let c = *c;
                unary(&|v| v * c)
            }
            ScaleGrad(_) => unary(&|v| v),
            Ln => {
                let a = node(0);
                if let Some((index, &v)) = a.value.iter().enumerate().find(|(_, &v)| v <= T::zero()) {
                    return Err(TensorError::Domain {
                        value: v.to_f64().unwrap_or(f64::NAN),
                        index,
                    });
                }
                unary(&|v| v.ln())
            }
            Softmax => {
                let a = node(0);
                if a.shape.is_empty() {
                    return Err(TensorError::Rank {
                        op: "softmax",
                        expected: 1,
                        shape: vec![],
                    });
                }
                let (rows, cols) = rows_cols(&a.shape);
                let mut out = vec![T::zero(); a.value.len()];
                softmax_rows(&a.value, rows, cols, &mut out);
                (a.shape.clone(), out)
            }
            BatchMean => {
                let a = node(0);
                match a.shape.len() {
                    1 => {
                        let n = a.shape[0];
                        if n == 0 {
                            return Err(TensorError::Contract("batch mean of empty tensor".into()));
                        }
                        (vec![], vec![a.value.iter().copied().sum::<T>() / cast(n)])
                    }
                    2 => {
                        let (m, n) = (a.shape[0], a.shape[1]);
                        if m == 0 {
                            return Err(TensorError::Contract("batch mean of empty batch".into()));
                        }
                        let mut out = vec![T::zero(); n];
                        for r in 0..m {
                            for (o, &v) in out.iter_mut().zip(&a.value[r * n..(r + 1) * n]) {
                                *o = *o + v;
                            }
                        }
                        let denom: T = cast(m);
                        out.iter_mut().for_each(|o| *o = *o / denom);
                        (vec![n], out)
                    }
                    _ => {
                        return Err(TensorError::Rank {
                            op: "batch_mean",
                            expected: 2,
                            shape: a.shape.clone(),
                        })
                    }
                }
            }
            Mean => {
                let a = node(0);
                if a.value.is_empty() {
                    return Err(TensorError::Contract("mean of empty tensor".into()));
                }
                (vec![], vec![a.value.iter().copied().sum::<T>() / cast(a.value.len())])
            }
            Sum => (vec![], vec![node(0).value.iter().copied().sum()]),
            SumSquares => (vec![], vec![node(0).value.iter().map(|&v| v * v).sum()]),
            Transpose => {
                let a = node(0);
                let (m, n) = rank2("transpose", &a.shape)?;
                let mut out = vec![T::zero(); m * n];
                for r in 0..m {
                    for c in 0..n {
                        out[c * m + r] = a.value[r * n + c];
                    }
                }
                (vec![n, m], out)
            }
            CenterCols => {
                let a = node(0);
                let (m, n) = rank2("center_cols", &a.shape)?;
                let means = column_means(&a.value, m, n);
                let mut out = a.value.clone();
                for r in 0..m {
                    for (o, mu) in out[r * n..(r + 1) * n].iter_mut().zip(&means) {
                        *o = *o - *mu;
                    }
                }
                (vec![m, n], out)
            }
            NormalizeRows { eps } => {
                let a = node(0);
                let (m, n) = rank2("normalize_rows", &a.shape)?;
                let mut out = a.value.clone();
                for r in 0..m {
                    let row = &mut out[r * n..(r + 1) * n];
                    let norm = (row.iter().map(|&v| v * v).sum::<T>() + *eps).sqrt();
                    row.iter_mut().for_each(|v| *v = *v / norm);
                }
                (vec![m, n], out)
            }
            SliceRows { start, end } => {
                let a = node(0);
                let (m, n) = rank2("slice_rows", &a.shape)?;
                if start > end || *end > m {
                    return Err(TensorError::Contract(format!(
                        "row slice {start}..{end} out of range for {m} rows"
                    )));
                }
                (vec![end - start, n], a.value[start * n..end * n].to_vec())
            }
            SliceCols { start, end } => {
                let a = node(0);
                let (m, n) = rank2("slice_cols", &a.shape)?;
                if start > end || *end > n {
                    return Err(TensorError::Contract(format!(
                        "column slice {start}..{end} out of range for {n} columns"
                    )));
                }
                let mut out = Vec::with_capacity(m * (end - start));
                for r in 0..m {
                    out.extend_from_slice(&a.value[r * n + start..r * n + end]);
                }
                (vec![m, end - start], out)
            }
            TileCols { times } => {
                let a = node(0);
                let (m, n) = rank2("tile_cols", &a.shape)?;
                let mut out = Vec::with_capacity(m * n * times);
                for r in 0..m {
                    for _ in 0..*times {
                        out.extend_from_slice(&a.value[r * n..(r + 1) * n]);
                    }
                }
                (vec![m, n * times], out)
            }
            SoftmaxCrossEntropy => {
                let (a, b) = (node(0), node(1));
                let (m, n) = rank2("softmax_cross_entropy", &a.shape)?;
                if a.shape != b.shape {
                    return Err(mismatch("softmax_cross_entropy", &a.shape, &b.shape));
                }
                if m == 0 {
                    return Err(TensorError::Contract("cross entropy of empty batch".into()));
                }
                let logp = log_softmax_rows(&a.value, m, n);
                let total: T = logp.iter().zip(&b.value).map(|(&lp, &t)| -(t * lp)).sum();
                (vec![], vec![total / cast(m)])
            }
        })
    }

    /// Gradients of `loss` with respect to every leaf that requires them.
    /// Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let wrt: Vec<Var> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].op.is_none() && self.nodes[i].requires_grad)
            .map(Var)
            .collect();
        let grads = self.gradients(&[(loss, T::one())], &wrt)?;
        Ok(Gradients {
            grads: wrt.into_iter().zip(grads).collect(),
        })
    }

    /// Gradient of `sum(weight * seed)` with respect to each of `wrt`.
    ///
    /// Every seed must be a scalar. Seeds with weight zero are skipped, and
    /// only nodes that lie between a seed and some `wrt` var are visited. The
    /// tape is left intact so several objectives can share one forward pass.
    pub fn gradients(&self, seeds: &[(Var, T)], wrt: &[Var]) -> Result<Vec<Vec<T>>, TensorError> {
        for &(s, _) in seeds {
            if !is_scalar(&self.nodes[s.0].shape) {
                return Err(TensorError::Contract(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    self.nodes[s.0].shape
                )));
            }
        }
        let n = self.nodes.len();
        let mut is_wrt = vec![false; n];
        for v in wrt {
            is_wrt[v.0] = true;
        }
        let mut needed = vec![false; n];
        for i in 0..n {
            let node = &self.nodes[i];
            needed[i] = is_wrt[i] || node.inputs.iter().any(|v| needed[v.0]);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        let mut top = 0;
        for &(s, w) in seeds {
            if w == T::zero() || !needed[s.0] {
                continue;
            }
            let slot = grads[s.0].get_or_insert_with(|| vec![T::zero()]);
            slot[0] = slot[0] + w;
            top = top.max(s.0 + 1);
        }
        let mut kept: HashMap<usize, Vec<T>> = HashMap::new();
        for i in (0..top).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].op.is_some() {
                self.backprop(i, &g, &mut grads, &needed)?;
            }
            if is_wrt[i] {
                kept.insert(i, g);
            }
        }
        Ok(wrt
            .iter()
            .map(|v| {
                kept.get(&v.0)
                    .cloned()
                    .unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.len()])
            })
            .collect())
    }

    fn backprop(
        &self,
        idx: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        needed: &[bool],
    ) -> Result<(), TensorError> {
        use OpKind::*;
        let node = &self.nodes[idx];
        let op = node.op.as_ref().expect("only ops are backpropagated");
        let inp = |i: usize| &self.nodes[node.inputs[i].0];
        let want = |i: usize| needed[node.inputs[i].0];
        let y = &node.value;

        // Accumulation buffer for input `i`.
        macro_rules! slot {
            ($i:expr) => {{
                let v = node.inputs[$i].0;
                let len = self.nodes[v].value.len();
                grads[v].get_or_insert_with(|| vec![T::zero(); len])
            }};
        }

        match op {
            Add | Sub | Mul => {
                let (a, b) = (inp(0), inp(1));
                let same = a.shape == b.shape;
                for side in 0..2 {
                    if !want(side) {
                        continue;
                    }
                    let this = inp(side);
                    let other = inp(1 - side);
                    let sign = if matches!(op, Sub) && side == 1 { -T::one() } else { T::one() };
                    let factor = |j: usize| -> T {
                        match op {
                            Mul => {
                                if other.value.len() == 1 {
                                    other.value[0]
                                } else {
                                    other.value[j]
                                }
                            }
                            _ => sign,
                        }
                    };
                    let buf = slot!(side);
                    if same || (this.value.len() == g.len()) {
                        for (j, (o, &gj)) in buf.iter_mut().zip(g).enumerate() {
                            *o = *o + gj * factor(j);
                        }
                    } else {
                        // this side was broadcast from a scalar
                        let total: T = g.iter().enumerate().map(|(j, &gj)| gj * factor(j)).sum();
                        buf[0] = buf[0] + total;
                    }
                }
            }
            MatMul => {
                let (a, b) = (inp(0), inp(1));
                let (m, k) = (a.shape[0], a.shape[1]);
                let n = b.shape[1];
                if want(0) {
                    T::gemm(m, n, k, g, false, &b.value, true, T::one(), slot!(0));
                }
                if want(1) {
                    T::gemm(k, m, n, &a.value, true, g, false, T::one(), slot!(1));
                }
            }
            AddBias => {
                let n = inp(1).value.len();
                if want(0) {
                    let buf = slot!(0);
                    for (o, &gj) in buf.iter_mut().zip(g) {
                        *o = *o + gj;
                    }
                }
                if want(1) {
                    let buf = slot!(1);
                    for row in g.chunks(n) {
                        for (o, &gj) in buf.iter_mut().zip(row) {
                            *o = *o + gj;
                        }
                    }
                }
            }
            ConcatCols => {
                let (rows, total) = rows_cols(&node.shape);
                let mut offset = 0;
                for i in 0..node.inputs.len() {
                    let w = rows_cols(&inp(i).shape).1;
                    if want(i) {
                        let buf = slot!(i);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (o, &gj) in buf[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *o = *o + gj;
                            }
                        }
                    }
                    offset += w;
                }
            }
            ConcatRows => {
                let mut offset = 0;
                for i in 0..node.inputs.len() {
                    let len = inp(i).value.len();
                    if want(i) {
                        let buf = slot!(i);
                        for (o, &gj) in buf.iter_mut().zip(&g[offset..offset + len]) {
                            *o = *o + gj;
                        }
                    }
                    offset += len;
                }
            }
            Relu => {
                let buf = slot!(0);
                for ((o, &gj), &yj) in buf.iter_mut().zip(g).zip(y) {
                    if yj > T::zero() {
                        *o = *o + gj;
                    }
                }
            }
            Sigmoid => {
                let buf = slot!(0);
                for ((o, &gj), &yj) in buf.iter_mut().zip(g).zip(y) {
                    *o = *o + gj * yj * (T::one() - yj);
                }
            }
            Exp => {
                let buf = slot!(0);
                for ((o, &gj), &yj) in buf.iter_mut().zip(g).zip(y) {
                    *o = *o + gj * yj;
                }
            }
            Ln => {
                let x = &inp(0).value;
                let buf = slot!(0);
                for ((o, &gj), &xj) in buf.iter_mut().zip(g).zip(x) {
                    *o = *o + gj / xj;
                }
            }
            Scale(c) | ScaleGrad(c) => {
                let buf = slot!(0);
                for (o, &gj) in buf.iter_mut().zip(g) {
                    *o = *o + gj * *c;
                }
            }
            Softmax => {
                let (rows, cols) = rows_cols(&node.shape);
                let buf = slot!(0);
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let dot: T = g[span.clone()].iter().zip(&y[span.clone()]).map(|(&a, &b)| a * b).sum();
                    for j in span {
                        buf[j] = buf[j] + y[j] * (g[j] - dot);
                    }
                }
            }
            BatchMean => {
                let a = inp(0);
                let m = a.shape[0];
                let denom: T = cast(m);
                let buf = slot!(0);
                if a.shape.len() == 1 {
                    let share = g[0] / denom;
                    buf.iter_mut().for_each(|o| *o = *o + share);
                } else {
                    let n = a.shape[1];
                    for r in 0..m {
                        for (o, &gj) in buf[r * n..(r + 1) * n].iter_mut().zip(g) {
                            *o = *o + gj / denom;
                        }
                    }
                }
            }
            Mean => {
                let share = g[0] / cast(inp(0).value.len());
                slot!(0).iter_mut().for_each(|o| *o = *o + share);
            }
            Sum => {
                let g0 = g[0];
                slot!(0).iter_mut().for_each(|o| *o = *o + g0);
            }
            SumSquares => {
                let two = T::one() + T::one();
                let x = &inp(0).value;
                let buf = slot!(0);
                for (o, &xj) in buf.iter_mut().zip(x) {
                    *o = *o + two * xj * g[0];
                }
            }
            Transpose => {
                let (m, n) = (inp(0).shape[0], inp(0).shape[1]);
                let buf = slot!(0);
                for r in 0..m {
                    for c in 0..n {
                        buf[r * n + c] = buf[r * n + c] + g[c * m + r];
                    }
                }
            }
            CenterCols => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let means = column_means(g, m, n);
                let buf = slot!(0);
                for r in 0..m {
                    for c in 0..n {
                        buf[r * n + c] = buf[r * n + c] + g[r * n + c] - means[c];
                    }
                }
            }
            NormalizeRows { eps } => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let x = &inp(0).value;
                let buf = slot!(0);
                for r in 0..m {
                    let span = r * n..(r + 1) * n;
                    let norm = (x[span.clone()].iter().map(|&v| v * v).sum::<T>() + *eps).sqrt();
                    let dot: T = g[span.clone()].iter().zip(&y[span.clone()]).map(|(&a, &b)| a * b).sum();
                    for j in span {
                        buf[j] = buf[j] + (g[j] - y[j] * dot) / norm;
                    }
                }
            }
            SliceRows { start, .. } => {
                let n = node.shape[1];
                let buf = slot!(0);
                for (o, &gj) in buf[start * n..start * n + g.len()].iter_mut().zip(g) {
                    *o = *o + gj;
                }
            }
            SliceCols { start, end } => {
                let (m, n) = (inp(0).shape[0], inp(0).shape[1]);
                let w = end - start;
                let buf = slot!(0);
                for r in 0..m {
                    for c in 0..w {
                        buf[r * n + start + c] = buf[r * n + start + c] + g[r * w + c];
                    }
                }
            }
            TileCols { times } => {
                let (m, n) = (inp(0).shape[0], inp(0).shape[1]);
                let buf = slot!(0);
                for r in 0..m {
                    for t in 0..*times {
                        for c in 0..n {
                            buf[r * n + c] = buf[r * n + c] + g[r * n * times + t * n + c];
                        }
                    }
                }
            }
            SoftmaxCrossEntropy => {
                let (logits, targets) = (inp(0), inp(1));
                let (m, n) = (logits.shape[0], logits.shape[1]);
                let logp = log_softmax_rows(&logits.value, m, n);
                let scale = g[0] / cast(m);
                if want(0) {
                    let buf = slot!(0);
                    for r in 0..m {
                        let span = r * n..(r + 1) * n;
                        let mass: T = targets.value[span.clone()].iter().copied().sum();
                        for j in span {
                            buf[j] = buf[j] + scale * (logp[j].exp() * mass - targets.value[j]);
                        }
                    }
                }
                if want(1) {
                    let buf = slot!(1);
                    for (o, &lp) in buf.iter_mut().zip(&logp) {
                        *o = *o - scale * lp;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::AddBias, &[x, bias])
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.apply(OpKind::ConcatCols, parts)
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.apply(OpKind::ConcatRows, parts)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Relu, &[x])
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Sigmoid, &[x])
    }
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Softmax, &[x])
    }
    pub fn ln(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Ln, &[x])
    }
    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Exp, &[x])
    }
    pub fn batch_mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::BatchMean, &[x])
    }
    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Mean, &[x])
    }
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Sum, &[x])
    }
    pub fn sum_squares(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::SumSquares, &[x])
    }
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Transpose, &[x])
    }
    pub fn center_cols(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::CenterCols, &[x])
    }
    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Result<Var, TensorError> {
        self.apply(OpKind::NormalizeRows { eps }, &[x])
    }
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        self.apply(OpKind::SliceRows { start, end }, &[x])
    }
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        self.apply(OpKind::SliceCols { start, end }, &[x])
    }
    pub fn tile_cols(&mut self, x: Var, times: usize) -> Result<Var, TensorError> {
        self.apply(OpKind::TileCols { times }, &[x])
    }
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, TensorError> {
        self.apply(OpKind::Scale(factor), &[x])
    }
    /// Gradient reversal: identity forward, gradient times `factor` backward.
    pub fn scale_grad(&mut self, x: Var, factor: T) -> Result<Var, TensorError> {
        self.apply(OpKind::ScaleGrad(factor), &[x])
    }
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::SoftmaxCrossEntropy, &[logits, targets])
    }
    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        let s = self.scalar(c);
        self.add(x, s)
    }
}

fn column_means<T: Real>(x: &[T], m: usize, n: usize) -> Vec<T> {
    let mut means = vec![T::zero(); n];
    for r in 0..m {
        for (mu, &v) in means.iter_mut().zip(&x[r * n..(r + 1) * n]) {
            *mu = *mu + v;
        }
    }
    if m > 0 {
        let denom: T = cast(m);
        means.iter_mut().for_each(|mu| *mu = *mu / denom);
    }
    means
}
