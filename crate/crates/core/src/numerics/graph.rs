use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{
    dot, log_softmax_row, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid, softmax_row,
    softplus,
};
use super::{NumericsError, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse row mixer: output row `r` is `sum_j weight[r*k+j] * input[index[r*k+j], :]`.
#[derive(Clone, Debug)]
pub struct WeightedRows {
    pub out_rows: usize,
    pub per_row: usize,
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { name: String },
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm(Var),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    SumLast(Var),
    Reshape(Var, Vec<usize>),
    Gather(Var, Arc<[usize]>, Vec<usize>),
    GatherWeighted(Var, Arc<WeightedRows>),
    Concat(Vec<Var>, Axis),
    ExclusiveCumsum(Var),
    Integrate(Var, Var),
    Detach(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Tanh(..) => "tanh",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::MeanRows(..) => "mean_rows",
            Op::SumLast(..) => "sum_last",
            Op::Reshape(..) => "reshape",
            Op::Gather(..) => "gather",
            Op::GatherWeighted(..) => "gather_weighted",
            Op::Concat(..) => "concat",
            Op::ExclusiveCumsum(..) => "exclusive_cumsum",
            Op::Integrate(..) => "integrate",
            Op::Detach(..) => "detach",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } | Op::Constant => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Integrate(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::LayerNorm(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::MeanRows(a)
            | Op::SumLast(a)
            | Op::Reshape(a, _)
            | Op::Gather(a, _, _)
            | Op::GatherWeighted(a, _)
            | Op::ExclusiveCumsum(a)
            | Op::Detach(a) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in execution order, so the node list is always a valid
/// topological order. The recorded ops can be re-executed against new leaf
/// values with [`Graph::forward`], which is what the finite-difference checker
/// relies on.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: BTreeMap<String, Var>,
    outputs: BTreeMap<String, Var>,
}

fn shape_err(node: usize, op: &Op, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch {
        node: format!("#{node} ({})", op.name()),
        detail,
    }
}

/// Leading-batch broadcast check: `b` must equal `a` or be a suffix of it.
fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn eval<'a, F>(op: &Op, v: F, node: usize) -> Result<Tensor, NumericsError>
where
    F: Fn(&Var) -> &'a Tensor,
{
    let out = match op {
        Op::Leaf { .. } | Op::Constant => unreachable!("leaves are not evaluated"),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (ta, tb) = (v(a), v(b));
            if !broadcastable(ta.shape(), tb.shape()) {
                return Err(shape_err(
                    node,
                    op,
                    format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape()),
                ));
            }
            let bn = tb.numel();
            let bd = tb.data();
            let data: Vec<f64> = match op {
                Op::Add(..) => ta.data().iter().enumerate().map(|(i, x)| x + bd[i % bn]).collect(),
                Op::Sub(..) => ta.data().iter().enumerate().map(|(i, x)| x - bd[i % bn]).collect(),
                _ => ta.data().iter().enumerate().map(|(i, x)| x * bd[i % bn]).collect(),
            };
            Tensor::from_parts(ta.shape().to_vec(), data)
        }
        Op::Scale(a, s) => {
            let t = v(a);
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|x| x * s).collect())
        }
        Op::AddScalar(a, s) => {
            let t = v(a);
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|x| x + s).collect())
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (v(a), v(b));
            if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
                return Err(shape_err(
                    node,
                    op,
                    format!("{:?} x {:?}", ta.shape(), tb.shape()),
                ));
            }
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let mut out = vec![0.0; m * n];
            matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
            Tensor::from_parts(vec![m, n], out)
        }
        Op::MatMulNT(a, b) => {
            let (ta, tb) = (v(a), v(b));
            if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
                return Err(shape_err(
                    node,
                    op,
                    format!("{:?} x {:?}^T", ta.shape(), tb.shape()),
                ));
            }
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
            let mut out = vec![0.0; m * n];
            matmul_nt_acc(ta.data(), tb.data(), &mut out, m, k, n);
            Tensor::from_parts(vec![m, n], out)
        }
        Op::Relu(a) => map(v(a), |x| if x > 0.0 { x } else { 0.0 }),
        Op::Sigmoid(a) => map(v(a), sigmoid),
        Op::Softplus(a) => map(v(a), softplus),
        Op::Exp(a) => map(v(a), libm::exp),
        Op::Tanh(a) => map(v(a), libm::tanh),
        Op::Softmax(a) | Op::LogSoftmax(a) => {
            let t = v(a);
            let n = t.last_dim();
            let mut out = vec![0.0; t.numel()];
            for (row, o) in t.data().chunks(n).zip(out.chunks_mut(n)) {
                if matches!(op, Op::Softmax(_)) {
                    softmax_row(row, o);
                } else {
                    log_softmax_row(row, o);
                }
            }
            Tensor::from_parts(t.shape().to_vec(), out)
        }
        Op::LayerNorm(a) => {
            let t = v(a);
            let n = t.last_dim();
            let mut out = vec![0.0; t.numel()];
            for (row, o) in t.data().chunks(n).zip(out.chunks_mut(n)) {
                let (mean, inv) = norm_stats(row);
                for (oo, &x) in o.iter_mut().zip(row) {
                    *oo = (x - mean) * inv;
                }
            }
            Tensor::from_parts(t.shape().to_vec(), out)
        }
        Op::SumAll(a) => Tensor::scalar(v(a).data().iter().sum()),
        Op::MeanAll(a) => {
            let t = v(a);
            Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
        }
        Op::MeanRows(a) => {
            let t = v(a);
            let (rows, cols) = t.rows_cols();
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, x) in out.iter_mut().zip(t.row(r)) {
                    *o += x;
                }
            }
            let inv = 1.0 / rows as f64;
            out.iter_mut().for_each(|o| *o *= inv);
            Tensor::from_parts(vec![1, cols], out)
        }
        Op::SumLast(a) => {
            let t = v(a);
            let n = t.last_dim();
            let data: Vec<f64> = t.data().chunks(n).map(|c| c.iter().sum()).collect();
            let mut shape = t.shape().to_vec();
            *shape.last_mut().unwrap() = 1;
            Tensor::from_parts(shape, data)
        }
        Op::Reshape(a, shape) => {
            let t = v(a);
            if shape.iter().product::<usize>() != t.numel() {
                return Err(shape_err(
                    node,
                    op,
                    format!("{:?} -> {:?}", t.shape(), shape),
                ));
            }
            Tensor::from_parts(shape.clone(), t.data().to_vec())
        }
        Op::Gather(a, idx, shape) => {
            let t = v(a);
            let src = t.data();
            if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
                return Err(shape_err(
                    node,
                    op,
                    format!("index {bad} out of range for {:?}", t.shape()),
                ));
            }
            Tensor::from_parts(shape.clone(), idx.iter().map(|&i| src[i]).collect())
        }
        Op::GatherWeighted(a, rows) => {
            let t = v(a);
            let (n_in, c) = t.rows_cols();
            if rows.index.iter().any(|&i| i >= n_in) {
                return Err(shape_err(node, op, format!("row index out of range for {:?}", t.shape())));
            }
            let mut out = vec![0.0; rows.out_rows * c];
            for r in 0..rows.out_rows {
                let o = &mut out[r * c..(r + 1) * c];
                for j in 0..rows.per_row {
                    let w = rows.weight[r * rows.per_row + j];
                    if w == 0.0 {
                        continue;
                    }
                    let src = t.row(rows.index[r * rows.per_row + j]);
                    for (oo, s) in o.iter_mut().zip(src) {
                        *oo += w * s;
                    }
                }
            }
            Tensor::from_parts(vec![rows.out_rows, c], out)
        }
        Op::Concat(parts, axis) => {
            let first = v(&parts[0]);
            if first.rank() != 2 {
                return Err(shape_err(node, op, format!("rank-2 parts required, got {:?}", first.shape())));
            }
            match axis {
                Axis::Rows => {
                    let cols = first.shape()[1];
                    let mut data = Vec::new();
                    let mut rows = 0;
                    for p in parts {
                        let t = v(p);
                        if t.rank() != 2 || t.shape()[1] != cols {
                            return Err(shape_err(node, op, format!("column mismatch {:?} vs {cols}", t.shape())));
                        }
                        rows += t.shape()[0];
                        data.extend_from_slice(t.data());
                    }
                    Tensor::from_parts(vec![rows, cols], data)
                }
                Axis::Cols => {
                    let rows = first.shape()[0];
                    let mut cols = 0;
                    for p in parts {
                        let t = v(p);
                        if t.rank() != 2 || t.shape()[0] != rows {
                            return Err(shape_err(node, op, format!("row mismatch {:?} vs {rows}", t.shape())));
                        }
                        cols += t.shape()[1];
                    }
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for p in parts {
                            data.extend_from_slice(v(p).row(r));
                        }
                    }
                    Tensor::from_parts(vec![rows, cols], data)
                }
            }
        }
        Op::ExclusiveCumsum(a) => {
            let t = v(a);
            let n = t.last_dim();
            let mut out = vec![0.0; t.numel()];
            for (row, o) in t.data().chunks(n).zip(out.chunks_mut(n)) {
                let mut acc = 0.0;
                for (oo, &x) in o.iter_mut().zip(row) {
                    *oo = acc;
                    acc += x;
                }
            }
            Tensor::from_parts(t.shape().to_vec(), out)
        }
        Op::Integrate(w, vals_v) => {
            let (tw, tv) = (v(w), v(vals_v));
            if tw.rank() != 2 || tv.rank() != 3 || tv.shape()[..2] != *tw.shape() {
                return Err(shape_err(
                    node,
                    op,
                    format!("weights {:?} vs values {:?}", tw.shape(), tv.shape()),
                ));
            }
            let (r, s, k) = (tv.shape()[0], tv.shape()[1], tv.shape()[2]);
            let mut out = vec![0.0; r * k];
            for ri in 0..r {
                for si in 0..s {
                    let wv = tw.data()[ri * s + si];
                    let src = &tv.data()[(ri * s + si) * k..(ri * s + si + 1) * k];
                    for (o, x) in out[ri * k..(ri + 1) * k].iter_mut().zip(src) {
                        *o += wv * x;
                    }
                }
            }
            Tensor::from_parts(vec![r, k], out)
        }
        Op::Detach(a) => v(a).clone(),
    };
    if let Some(index) = out.data().iter().position(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite {
            context: op.name(),
            index,
        });
    }
    Ok(out)
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

fn norm_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / libm::sqrt(var + LAYER_NORM_EPS))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, name: &str, value: Tensor, grad: bool) -> Result<Var, NumericsError> {
        if self.leaves.contains_key(name) {
            return Err(NumericsError::DuplicateLeaf(name.to_string()));
        }
        let var = self.push(
            Op::Leaf {
                name: name.to_string(),
            },
            value.with_requires_grad(grad),
            grad,
        );
        self.leaves.insert(name.to_string(), var);
        Ok(var)
    }

    /// Trainable named leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var, NumericsError> {
        self.leaf(name, value, true)
    }

    /// Named leaf without gradient that [`Graph::forward`] may substitute.
    pub fn input(&mut self, name: &str, value: Tensor) -> Result<Var, NumericsError> {
        self.leaf(name, value, false)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn leaf_var(&self, name: &str) -> Option<Var> {
        self.leaves.get(name).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn mark_output(&mut self, name: &str, v: Var) {
        self.outputs.insert(name.to_string(), v);
    }

    pub fn output(&self, name: &str) -> Option<Var> {
        self.outputs.get(name).copied()
    }

    fn apply(&mut self, op: Op) -> Result<Var, NumericsError> {
        let node = self.nodes.len();
        let needs_grad = match op {
            Op::Detach(_) => false,
            _ => op.inputs().iter().any(|x| self.nodes[x.0].needs_grad),
        };
        let nodes = &self.nodes;
        let value = eval(&op, |x: &Var| &nodes[x.0].value, node)?;
        Ok(self.push(op, value, needs_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        self.apply(Op::Scale(a, s))
    }
    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        self.apply(Op::AddScalar(a, s))
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Op::MatMul(a, b))
    }
    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Op::MatMulNT(a, b))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Relu(a))
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Sigmoid(a))
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Softplus(a))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Exp(a))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Tanh(a))
    }
    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Softmax(a))
    }
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::LogSoftmax(a))
    }
    /// Zero-mean unit-variance normalization over the last axis (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::LayerNorm(a))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::SumAll(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::MeanAll(a))
    }
    /// Mean over the leading axis, producing `[1, cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::MeanRows(a))
    }
    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::SumLast(a))
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        self.apply(Op::Reshape(a, shape.to_vec()))
    }
    /// Flat index select: `out.flat[i] = a.flat[index[i]]`.
    pub fn gather(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        shape: &[usize],
    ) -> Result<Var, NumericsError> {
        if index.len() != shape.iter().product::<usize>() {
            return Err(shape_err(
                self.nodes.len(),
                &Op::Gather(a, index.clone(), shape.to_vec()),
                format!("{} indices for shape {:?}", index.len(), shape),
            ));
        }
        self.apply(Op::Gather(a, index, shape.to_vec()))
    }
    pub fn gather_weighted(&mut self, a: Var, rows: Arc<WeightedRows>) -> Result<Var, NumericsError> {
        self.apply(Op::GatherWeighted(a, rows))
    }
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch {
                node: format!("#{} (concat)", self.nodes.len()),
                detail: "no parts".to_string(),
            });
        }
        self.apply(Op::Concat(parts.to_vec(), axis))
    }
    pub fn exclusive_cumsum(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::ExclusiveCumsum(a))
    }
    /// `out[r,k] = sum_s weights[r,s] * values[r,s,k]`.
    pub fn integrate(&mut self, weights: Var, values: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Integrate(weights, values))
    }
    pub fn detach(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Op::Detach(a))
    }

    /// Rows `start..end` of a rank-2 node.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (_, cols) = t.rows_cols();
        let idx: Arc<[usize]> = (start * cols..end * cols).collect();
        self.gather(a, idx, &[end - start, cols])
    }

    /// Columns `start..end` of a rank-2 node.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(a).rows_cols();
        let width = end - start;
        let idx: Arc<[usize]> = (0..rows)
            .flat_map(|r| (start..end).map(move |c| r * cols + c))
            .collect();
        self.gather(a, idx, &[rows, width])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(a).rows_cols();
        let idx: Arc<[usize]> = (0..cols)
            .flat_map(|c| (0..rows).map(move |r| r * cols + c))
            .collect();
        self.gather(a, idx, &[cols, rows])
    }

    /// Re-executes every recorded op with the named leaves replaced by
    /// `inputs`, returning the values of all marked outputs.
    pub fn forward(
        &self,
        inputs: &BTreeMap<String, Tensor>,
    ) -> Result<BTreeMap<String, Tensor>, NumericsError> {
        for (name, t) in inputs {
            let var = self
                .leaves
                .get(name)
                .ok_or_else(|| NumericsError::UnknownLeaf(name.clone()))?;
            let expected = self.nodes[var.0].value.shape();
            if t.shape() != expected {
                return Err(NumericsError::ShapeMismatch {
                    node: format!("leaf '{name}'"),
                    detail: format!("expected {:?}, got {:?}", expected, t.shape()),
                });
            }
        }
        let vals = self.replay(inputs)?;
        Ok(self
            .outputs
            .iter()
            .map(|(name, v)| (name.clone(), vals[v.0].clone()))
            .collect())
    }

    /// Value of `target` after replaying with substituted leaves.
    pub fn replay_value(
        &self,
        inputs: &BTreeMap<String, Tensor>,
        target: Var,
    ) -> Result<Tensor, NumericsError> {
        let mut vals = self.replay_prefix(inputs, target.0 + 1)?;
        Ok(vals.swap_remove(target.0))
    }

    fn replay(&self, inputs: &BTreeMap<String, Tensor>) -> Result<Vec<Tensor>, NumericsError> {
        self.replay_prefix(inputs, self.nodes.len())
    }

    fn replay_prefix(
        &self,
        inputs: &BTreeMap<String, Tensor>,
        upto: usize,
    ) -> Result<Vec<Tensor>, NumericsError> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(upto);
        for (i, node) in self.nodes[..upto].iter().enumerate() {
            let value = match &node.op {
                Op::Leaf { name } => inputs
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| node.value.clone()),
                Op::Constant => node.value.clone(),
                op => eval(op, |x: &Var| &vals[x.0], i)?,
            };
            vals.push(value);
        }
        Ok(vals)
    }

    /// Reverse-mode sweep from a scalar node. Returns a gradient for every
    /// trainable leaf; leaves with no path to `loss` get exact zeros.
    pub fn backward(&self, loss: Var) -> Result<BTreeMap<String, Tensor>, NumericsError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        let mut out = BTreeMap::new();
        for (name, var) in &self.leaves {
            let node = &self.nodes[var.0];
            if !node.needs_grad {
                continue;
            }
            let data = grads
                .get(var.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; node.value.numel()]);
            out.insert(name.clone(), Tensor::from_parts(node.value.shape().to_vec(), data));
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: &Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf { .. } | Op::Constant | Op::Detach(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let bn = val(b).numel();
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(b, &mut |s| {
                    for (k, y) in g.iter().enumerate() {
                        s[k % bn] += sign * y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let bn = tb.numel();
                acc(a, &mut |s| {
                    for (k, y) in g.iter().enumerate() {
                        s[k] += y * tb.data()[k % bn];
                    }
                });
                acc(b, &mut |s| {
                    for (k, y) in g.iter().enumerate() {
                        s[k % bn] += y * ta.data()[k];
                    }
                });
            }
            Op::Scale(a, c) => acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddScalar(a, _) | Op::Reshape(a, _) => {
                acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y))
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G B^T ; dB = A^T G
                if needs(a) {
                    acc(a, &mut |s| matmul_nt_acc(g, tb.data(), s, m, n, k));
                }
                if needs(b) {
                    acc(b, &mut |s| matmul_tn_acc(ta.data(), g, s, m, k, n));
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                // C = A B^T: dA = G B ; dB = G^T A
                if needs(a) {
                    acc(a, &mut |s| matmul_acc(g, tb.data(), s, m, n, k));
                }
                if needs(b) {
                    acc(b, &mut |s| matmul_tn_acc(g, ta.data(), s, m, n, k));
                }
            }
            Op::Relu(a) => {
                let x = val(a).data();
                acc(a, &mut |s| {
                    for k in 0..g.len() {
                        if x[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(a, &mut |s| {
                    for k in 0..g.len() {
                        s[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Softplus(a) => {
                let x = val(a).data();
                acc(a, &mut |s| {
                    for k in 0..g.len() {
                        s[k] += g[k] * sigmoid(x[k]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(a, &mut |s| {
                    for k in 0..g.len() {
                        s[k] += g[k] * y[k];
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(a, &mut |s| {
                    for k in 0..g.len() {
                        s[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                acc(a, &mut |s| {
                    for r in 0..y.len() / n {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let inner = dot(yr, gr);
                        for j in 0..n {
                            s[r * n + j] += yr[j] * (gr[j] - inner);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                acc(a, &mut |s| {
                    for r in 0..y.len() / n {
                        let gr = &g[r * n..(r + 1) * n];
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..n {
                            s[r * n + j] += gr[j] - libm::exp(y[r * n + j]) * gsum;
                        }
                    }
                });
            }
            Op::LayerNorm(a) => {
                let x = val(a).data();
                let y = node.value.data();
                let n = node.value.last_dim();
                let nf = n as f64;
                acc(a, &mut |s| {
                    for r in 0..y.len() / n {
                        let (_, inv) = norm_stats(&x[r * n..(r + 1) * n]);
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let gmean = gr.iter().sum::<f64>() / nf;
                        let gy = dot(gr, yr) / nf;
                        for j in 0..n {
                            s[r * n + j] += inv * (gr[j] - gmean - yr[j] * gy);
                        }
                    }
                });
            }
            Op::SumAll(a) => acc(a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::MeanAll(a) => {
                let c = g[0] / val(a).numel() as f64;
                acc(a, &mut |s| s.iter_mut().for_each(|x| *x += c))
            }
            Op::MeanRows(a) => {
                let (rows, cols) = val(a).rows_cols();
                let inv = 1.0 / rows as f64;
                acc(a, &mut |s| {
                    for r in 0..rows {
                        for c in 0..cols {
                            s[r * cols + c] += g[c] * inv;
                        }
                    }
                });
            }
            Op::SumLast(a) => {
                let n = val(a).last_dim();
                acc(a, &mut |s| {
                    for (k, x) in s.iter_mut().enumerate() {
                        *x += g[k / n];
                    }
                });
            }
            Op::Gather(a, idx, _) => acc(a, &mut |s| {
                for (k, &src) in idx.iter().enumerate() {
                    s[src] += g[k];
                }
            }),
            Op::GatherWeighted(a, rows) => {
                let c = val(a).rows_cols().1;
                acc(a, &mut |s| {
                    for r in 0..rows.out_rows {
                        let gr = &g[r * c..(r + 1) * c];
                        for j in 0..rows.per_row {
                            let w = rows.weight[r * rows.per_row + j];
                            if w == 0.0 {
                                continue;
                            }
                            let dst = rows.index[r * rows.per_row + j];
                            for (x, y) in s[dst * c..(dst + 1) * c].iter_mut().zip(gr) {
                                *x += w * y;
                            }
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for p in parts {
                        let n = val(p).numel();
                        acc(p, &mut |s| {
                            s.iter_mut().zip(&g[offset..offset + n]).for_each(|(x, y)| *x += y)
                        });
                        offset += n;
                    }
                }
                Axis::Cols => {
                    let rows = node.value.shape()[0];
                    let total = node.value.shape()[1];
                    let mut col0 = 0;
                    for p in parts {
                        let w = val(p).shape()[1];
                        acc(p, &mut |s| {
                            for r in 0..rows {
                                for c in 0..w {
                                    s[r * w + c] += g[r * total + col0 + c];
                                }
                            }
                        });
                        col0 += w;
                    }
                }
            },
            Op::ExclusiveCumsum(a) => {
                let n = node.value.last_dim();
                acc(a, &mut |s| {
                    for r in 0..g.len() / n {
                        let mut suffix = 0.0;
                        for j in (0..n).rev() {
                            s[r * n + j] += suffix;
                            suffix += g[r * n + j];
                        }
                    }
                });
            }
            Op::Integrate(w, v) => {
                let (tw, tv) = (val(w), val(v));
                let (r, sn, k) = (tv.shape()[0], tv.shape()[1], tv.shape()[2]);
                acc(w, &mut |s| {
                    for ri in 0..r {
                        let gr = &g[ri * k..(ri + 1) * k];
                        for si in 0..sn {
                            let src = &tv.data()[(ri * sn + si) * k..(ri * sn + si + 1) * k];
                            s[ri * sn + si] += dot(gr, src);
                        }
                    }
                });
                acc(v, &mut |s| {
                    for ri in 0..r {
                        let gr = &g[ri * k..(ri + 1) * k];
                        for si in 0..sn {
                            let wv = tw.data()[ri * sn + si];
                            let dst = &mut s[(ri * sn + si) * k..(ri * sn + si + 1) * k];
                            for (x, y) in dst.iter_mut().zip(gr) {
                                *x += wv * y;
                            }
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradients, GradCheckOptions};

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_matmul_forward() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[3], &[1., 2., 3.])).unwrap();
        g.mark_output("y", x);
        let out = g.forward(&BTreeMap::new()).unwrap();
        assert_eq!(out["y"].data(), &[1., 2., 3.]);

        let mut g = Graph::new();
        let w = g.param("w", Tensor::identity(2)).unwrap();
        let x = g.input("x", t(&[1, 2], &[3., 4.])).unwrap();
        let y = g.matmul(x, w).unwrap();
        assert_eq!(g.value(y).data(), &[3., 4.]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn replay_with_new_inputs() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[2], &[1., 2.])).unwrap();
        let y = g.mul(x, x).unwrap();
        g.mark_output("y", y);
        let mut inputs = BTreeMap::new();
        inputs.insert("x".into(), t(&[2], &[3., 4.]));
        assert_eq!(g.forward(&inputs).unwrap()["y"].data(), &[9., 16.]);
        inputs.insert("x".into(), t(&[3], &[3., 4., 5.]));
        assert!(matches!(
            g.forward(&inputs),
            Err(NumericsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn shape_error_names_node() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(NumericsError::ShapeMismatch { node, .. }) => assert!(node.contains("matmul")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0)).unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads["x"].item(), 6.0);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut g = Graph::new();
        let z = g.param("z", Tensor::zeros(&[1, 2])).unwrap();
        let ls = g.log_softmax(z).unwrap();
        let pick = g.gather(ls, Arc::from([0usize]), &[1]).unwrap();
        let loss = g.scale(pick, -1.0).unwrap();
        let grads = g.backward(loss).unwrap();
        let d = grads["z"].data();
        assert!((d[0] + 0.5).abs() < 1e-15 && (d[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn disconnected_leaf_gets_exact_zero() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(2.0)).unwrap();
        let _unused = g.param("u", Tensor::full(&[3], 7.0)).unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads["u"].data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            g.backward(x),
            Err(NumericsError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn constant_function_gradients_are_zero() {
        let mut g = Graph::new();
        let x = g.param("x", t(&[2], &[0.3, -0.2])).unwrap();
        let z = g.scale(x, 0.0).unwrap();
        let c = g.constant(Tensor::scalar(4.0));
        let s = g.sum(z).unwrap();
        let loss = g.add(s, c).unwrap();
        let rep = check_gradients(&g, loss, &GradCheckOptions::default()).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.max_rel_err(), 0.0);
        assert_eq!(g.backward(loss).unwrap()["x"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn bad_epsilon_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(1.0)).unwrap();
        let opts = GradCheckOptions {
            epsilon: 0.5,
            ..Default::default()
        };
        assert!(check_gradients(&g, x, &opts).is_err());
    }

    #[test]
    fn exclusive_cumsum_and_integrate() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1., 2., 3.]));
        let c = g.exclusive_cumsum(x).unwrap();
        assert_eq!(g.value(c).data(), &[0., 1., 3.]);
        let w = g.constant(t(&[1, 2], &[0.5, 0.25]));
        let v = g.constant(t(&[1, 2, 2], &[1., 2., 4., 8.]));
        let out = g.integrate(w, v).unwrap();
        assert_eq!(g.value(out).data(), &[1.5, 3.0]);
    }

    #[test]
    fn broadcast_is_leading_batch_only() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let row = g.constant(t(&[3], &[1., 2., 3.]));
        let col = g.constant(t(&[2], &[1., 2.]));
        let s = g.add(a, row).unwrap();
        assert_eq!(g.value(s).data(), &[1., 2., 3., 1., 2., 3.]);
        assert!(g.add(a, col).is_err());
    }
}
