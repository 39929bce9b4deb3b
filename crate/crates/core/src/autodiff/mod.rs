//! Tape-based reverse-mode automatic differentiation over dense rank-2 tensors.
//!
//! Every value lives on a [`Tape`] as an `f64` matrix; vectors are `n x 1` or
//! `1 x n` and scalars are `1 x 1`. Operations are recorded in execution order,
//! so backpropagation is a single reverse sweep over the tape.
//!
//! ```
//! use dugraph::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[3.0]]);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(&tape, x)[[0, 0]], 6.0);
//! ```

mod gradcheck;

pub use gradcheck::{grad_check, numeric_gradient};

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("row index {index} out of range ({rows} rows) in {op}")]
    Index { op: &'static str, index: usize, rows: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NonScalarLoss((usize, usize)),
}

pub type AdResult<T> = Result<T, AdError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive operations the tape knows how to differentiate.
#[derive(Debug, Clone)]
pub enum PrimitiveOp {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `n x m` plus a `1 x m` row broadcast to every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    /// Sums input row `k` into output row `index[k]`.
    ScatterAddRows(Var, Vec<usize>),
    /// Softmax of a column vector within groups of equal segment id.
    SegmentSoftmax(Var, Vec<usize>),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Mul(Var, Var),
    /// `n x m` scaled row-wise by an `n x 1` column.
    MulRows(Var, Var),
    Sum(Var),
    /// Sum of squared differences.
    SquaredError(Var, Var),
    /// Summed binary cross-entropy of logits against `{0,1}` targets.
    BceWithLogits(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: PrimitiveOp,
    requires_grad: bool,
}

/// Records values and the operations that produced them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn check_finite(op: &'static str, value: &Array2<f64>) -> AdResult<()> {
    if value.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AdError::NonFinite { op })
    }
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps arbitrary segment ids onto `0..n_segments` in order of first appearance.
fn compact_segments(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let compact = ids
        .iter()
        .map(|&id| {
            let next = map.len();
            *map.entry(id).or_insert(next)
        })
        .collect();
    (compact, map.len())
}

/// Numerically stable softmax within each segment of `logits`.
pub fn segment_softmax_values(logits: &[f64], segment_ids: &[usize]) -> Vec<f64> {
    let (seg, n_seg) = compact_segments(segment_ids);
    let mut max = vec![f64::NEG_INFINITY; n_seg];
    for (&x, &s) in logits.iter().zip(&seg) {
        if x > max[s] {
            max[s] = x;
        }
    }
    let mut out: Vec<f64> = logits.iter().zip(&seg).map(|(&x, &s)| (x - max[s]).exp()).collect();
    let mut total = vec![0.0; n_seg];
    for (&e, &s) in out.iter().zip(&seg) {
        total[s] += e;
    }
    for (e, &s) in out.iter_mut().zip(&seg) {
        *e /= total[s];
    }
    out
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    pub fn op(&self, v: Var) -> &PrimitiveOp {
        &self.nodes[v.0].op
    }

    /// Scalar value of a `1 x 1` tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: PrimitiveOp, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_flag(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, name: &'static str, value: Array2<f64>, op: PrimitiveOp, inputs: &[Var]) -> AdResult<Var> {
        check_finite(name, &value)?;
        let rg = self.grad_flag(inputs);
        Ok(self.push(value, op, rg))
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, PrimitiveOp::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, PrimitiveOp::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(AdError::Shape { op: "matmul", lhs: sa, rhs: sb });
        }
        let value = self.value(a).dot(self.value(b));
        self.record("matmul", value, PrimitiveOp::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> AdResult<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AdError::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        self.record("add", value, PrimitiveOp::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        self.record("sub", value, PrimitiveOp::Sub(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> AdResult<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(AdError::Shape { op: "add_row", lhs: sa, rhs: sr });
        }
        let value = self.value(a) + self.value(row);
        self.record("add_row", value, PrimitiveOp::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> AdResult<Var> {
        let value = self.value(a) * c;
        self.record("scale", value, PrimitiveOp::Scale(a, c), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> AdResult<Var> {
        let cols = parts.first().map(|&p| self.shape(p).1).unwrap_or(0);
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(AdError::Shape { op: "concat_rows", lhs: self.shape(parts[0]), rhs: self.shape(p) });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        self.record("concat_rows", value, PrimitiveOp::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> AdResult<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(AdError::Shape { op: "concat_cols", lhs: self.shape(parts[0]), rhs: self.shape(p) });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        self.record("concat_cols", value, PrimitiveOp::ConcatCols(parts.to_vec()), parts)
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> AdResult<Var> {
        let src = self.value(a);
        let (rows, cols) = src.dim();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(AdError::Index { op: "gather_rows", index: bad, rows });
        }
        let mut value = Array2::zeros((index.len(), cols));
        for (k, &i) in index.iter().enumerate() {
            value.row_mut(k).assign(&src.row(i));
        }
        self.record("gather_rows", value, PrimitiveOp::GatherRows(a, index.to_vec()), &[a])
    }

    /// `out[index[k]] += a[k]` into a fresh `out_rows x cols` matrix.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], out_rows: usize) -> AdResult<Var> {
        let src = self.value(a);
        let (rows, cols) = src.dim();
        if rows != index.len() {
            return Err(AdError::Shape { op: "scatter_add_rows", lhs: (rows, cols), rhs: (index.len(), 1) });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(AdError::Index { op: "scatter_add_rows", index: bad, rows: out_rows });
        }
        let mut value = Array2::zeros((out_rows, cols));
        for (k, &i) in index.iter().enumerate() {
            let mut dst = value.row_mut(i);
            dst += &src.row(k);
        }
        self.record("scatter_add_rows", value, PrimitiveOp::ScatterAddRows(a, index.to_vec()), &[a])
    }

    /// Softmax of an `n x 1` column within groups sharing a segment id.
    pub fn segment_softmax(&mut self, logits: Var, segment_ids: &[usize]) -> AdResult<Var> {
        let (rows, cols) = self.shape(logits);
        if cols != 1 || rows != segment_ids.len() {
            return Err(AdError::Shape { op: "segment_softmax", lhs: (rows, cols), rhs: (segment_ids.len(), 1) });
        }
        let flat: Vec<f64> = self.value(logits).iter().copied().collect();
        let out = segment_softmax_values(&flat, segment_ids);
        let value = Array2::from_shape_vec((rows, 1), out).expect("shape preserved");
        self.record("segment_softmax", value, PrimitiveOp::SegmentSoftmax(logits, segment_ids.to_vec()), &[logits])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> AdResult<Var> {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.record("leaky_relu", value, PrimitiveOp::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> AdResult<Var> {
        let value = self.value(a).mapv(sigmoid);
        self.record("sigmoid", value, PrimitiveOp::Sigmoid(a), &[a])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        self.record("mul", value, PrimitiveOp::Mul(a, b), &[a, b])
    }

    pub fn mul_rows(&mut self, a: Var, col: Var) -> AdResult<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc.1 != 1 || sc.0 != sa.0 {
            return Err(AdError::Shape { op: "mul_rows", lhs: sa, rhs: sc });
        }
        let value = self.value(a) * self.value(col);
        self.record("mul_rows", value, PrimitiveOp::MulRows(a, col), &[a, col])
    }

    pub fn sum(&mut self, a: Var) -> AdResult<Var> {
        let total = self.value(a).sum();
        self.record("sum", Array2::from_elem((1, 1), total), PrimitiveOp::Sum(a), &[a])
    }

    /// `sum((pred - target)^2)` as a scalar.
    pub fn squared_error(&mut self, pred: Var, target: Var) -> AdResult<Var> {
        self.same_shape("squared_error", pred, target)?;
        let total =
            Zip::from(self.value(pred)).and(self.value(target)).fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t));
        self.record(
            "squared_error",
            Array2::from_elem((1, 1), total),
            PrimitiveOp::SquaredError(pred, target),
            &[pred, target],
        )
    }

    /// Summed binary cross-entropy, evaluated directly from logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> AdResult<Var> {
        self.same_shape("bce_with_logits", logits, targets)?;
        let total =
            Zip::from(self.value(logits)).and(self.value(targets)).fold(0.0, |acc, &z, &y| acc + softplus(z) - z * y);
        self.record(
            "bce_with_logits",
            Array2::from_elem((1, 1), total),
            PrimitiveOp::BceWithLogits(logits, targets),
            &[logits, targets],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> AdResult<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AdError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate_node(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            PrimitiveOp::Leaf => {}
            PrimitiveOp::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            PrimitiveOp::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            PrimitiveOp::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            PrimitiveOp::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            PrimitiveOp::Scale(a, c) => acc(*a, g * *c),
            PrimitiveOp::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    acc(p, g.slice(s![start..start + rows, ..]).to_owned());
                    start += rows;
                }
            }
            PrimitiveOp::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let cols = self.shape(p).1;
                    acc(p, g.slice(s![.., start..start + cols]).to_owned());
                    start += cols;
                }
            }
            PrimitiveOp::GatherRows(a, index) => {
                if self.wants(*a) {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (k, &i) in index.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(k);
                    }
                    acc(*a, d);
                }
            }
            PrimitiveOp::ScatterAddRows(a, index) => {
                if self.wants(*a) {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (k, &i) in index.iter().enumerate() {
                        d.row_mut(k).assign(&g.row(i));
                    }
                    acc(*a, d);
                }
            }
            PrimitiveOp::SegmentSoftmax(a, ids) => {
                let y = &node.value;
                let (seg, n_seg) = compact_segments(ids);
                let mut dot = vec![0.0; n_seg];
                for (k, &s) in seg.iter().enumerate() {
                    dot[s] += y[[k, 0]] * g[[k, 0]];
                }
                let mut d = Array2::zeros(y.dim());
                for (k, &s) in seg.iter().enumerate() {
                    d[[k, 0]] = y[[k, 0]] * (g[[k, 0]] - dot[s]);
                }
                acc(*a, d);
            }
            PrimitiveOp::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= *slope;
                    }
                });
                acc(*a, d);
            }
            PrimitiveOp::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            PrimitiveOp::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.wants(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            PrimitiveOp::MulRows(a, col) => {
                if self.wants(*a) {
                    acc(*a, g * self.value(*col));
                }
                if self.wants(*col) {
                    let d = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*col, d);
                }
            }
            PrimitiveOp::Sum(a) => {
                acc(*a, Array2::from_elem(self.shape(*a), g[[0, 0]]));
            }
            PrimitiveOp::SquaredError(p, t) => {
                let diff = (self.value(*p) - self.value(*t)) * (2.0 * g[[0, 0]]);
                if self.wants(*t) {
                    acc(*t, -&diff);
                }
                acc(*p, diff);
            }
            PrimitiveOp::BceWithLogits(z, y) => {
                let gz = g[[0, 0]];
                if self.wants(*z) {
                    let mut d = self.value(*z).mapv(sigmoid);
                    d -= self.value(*y);
                    acc(*z, d * gz);
                }
                if self.wants(*y) {
                    acc(*y, self.value(*z) * -gz);
                }
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(tape.shape(v)))
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
