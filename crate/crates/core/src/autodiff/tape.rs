//! Reverse-mode tape over dense matrices.
//!
//! Every primitive evaluates eagerly and, when the tape is recording, pushes
//! a node describing how to route adjoints back to its inputs. Nodes are only
//! ever appended, so slot order is a topological order.

use std::borrow::Cow;

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a value slot on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Flatten(Var),
    SliceRows(Var, usize),
    LeakyRelu(Var, f64),
    MaskedRowSoftmax(Var, Vec<bool>),
    LogSoftmax(Var),
    ColumnMean(Var),
    ColumnMax(Var, Vec<usize>),
    Exp(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumSquares(Var),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Single-writer recording of one forward pass.
///
/// Leaves may borrow their values, so parameters are not copied per sample.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    recording: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    /// A tape that records operations for [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that only evaluates values. Forward results are identical to a
    /// recording tape; `backward` is rejected.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, value: &'a Matrix) -> Var {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    /// Trainable leaf owning its value.
    pub fn param_owned(&mut self, value: Matrix) -> Var {
        self.push_leaf(Cow::Owned(value), true)
    }

    /// Constant leaf; never receives an adjoint.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_leaf(Cow::Owned(value), false)
    }

    pub fn constant_ref(&mut self, value: &'a Matrix) -> Var {
        self.push_leaf(Cow::Borrowed(value), false)
    }

    fn push_leaf(&mut self, value: Cow<'a, Matrix>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Hadamard(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    /// Adds `offset` to every entry.
    pub fn offset(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        self.push(value, Op::Offset(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    /// Stacks matrices vertically; all inputs must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(
                m.cols(),
                cols,
                "concat_rows shape mismatch: {:?} vs {:?}",
                self.value(parts[0]).shape(),
                m.shape()
            );
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let value = Matrix::from_vec(rows, cols, data);
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Places matrices side by side; all inputs must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(
                m.rows(),
                rows,
                "concat_cols shape mismatch: {:?} vs {:?}",
                self.value(parts[0]).shape(),
                m.shape()
            );
            cols += m.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            for i in 0..rows {
                for j in 0..m.cols() {
                    value[(i, offset + j)] = m[(i, j)];
                }
            }
            offset += m.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Row-major reshape into a column vector.
    pub fn flatten(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::from_vec(m.len(), 1, m.as_slice().to_vec());
        self.push(value, Op::Flatten(a), &[a])
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let m = self.value(a);
        assert!(
            start <= end && end <= m.rows(),
            "slice_rows {start}..{end} out of range for {:?}",
            m.shape()
        );
        let cols = m.cols();
        let value = Matrix::from_vec(
            end - start,
            cols,
            m.as_slice()[start * cols..end * cols].to_vec(),
        );
        self.push(value, Op::SliceRows(a, start), &[a])
    }

    /// `x` where `x >= 0`, else `slope * x`. The derivative at zero is 1.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// Softmax of each row restricted to the columns where `mask` is set
    /// (row-major, same shape as `a`); masked-out entries are 0.
    ///
    /// Panics if a row has no admitted column.
    pub fn masked_row_softmax(&mut self, a: Var, mask: Vec<bool>) -> Var {
        let m = self.value(a);
        assert_eq!(mask.len(), m.len(), "mask length does not match {:?}", m.shape());
        let (rows, cols) = m.shape();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let row_mask = &mask[i * cols..(i + 1) * cols];
            let idx: Vec<usize> = (0..cols).filter(|&j| row_mask[j]).collect();
            let probs = softmax_over_set(m.row(i), &idx);
            for (k, &j) in idx.iter().enumerate() {
                value[(i, j)] = probs[k];
            }
        }
        self.push(value, Op::MaskedRowSoftmax(a, mask), &[a])
    }

    /// Log-softmax over every entry of `a`.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = Matrix::from_vec(
            self.value(a).rows(),
            self.value(a).cols(),
            log_softmax(self.value(a).as_slice()),
        );
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    /// Mean over rows, as a `cols x 1` column.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert!(m.rows() > 0, "row_mean of an empty matrix");
        let mut out = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for (o, v) in out.iter_mut().zip(m.row(i)) {
                *o += v;
            }
        }
        let n = m.rows() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        let value = Matrix::column(&out);
        self.push(value, Op::ColumnMean(a), &[a])
    }

    /// Max over rows, as a `cols x 1` column. Ties go to the lowest row.
    pub fn row_max(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert!(m.rows() > 0, "row_max of an empty matrix");
        let mut argmax = vec![0usize; m.cols()];
        let mut out = m.row(0).to_vec();
        for i in 1..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let value = Matrix::column(&out);
        self.push(value, Op::ColumnMax(a, argmax), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Ln(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum_squares());
        self.push(value, Op::SumSquares(a), &[a])
    }

    /// Exact adjoints of the scalar `loss` with respect to every slot.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Contract(
                "backward called on an inference-mode tape".into(),
            ));
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], v: Var, contribution: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, adj: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let da = g.matmul_t(self.value(*b));
                    self.accumulate(adj, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = self.value(*a).t_matmul(g);
                    self.accumulate(adj, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                let da = g.zip_map(self.value(*b), |x, y| x * y);
                let db = g.zip_map(self.value(*a), |x, y| x * y);
                self.accumulate(adj, *a, da);
                self.accumulate(adj, *b, db);
            }
            Op::Scale(a, factor) => self.accumulate(adj, *a, g.map(|x| x * factor)),
            Op::Offset(a) => self.accumulate(adj, *a, g.clone()),
            Op::Transpose(a) => self.accumulate(adj, *a, g.transpose()),
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut row = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let piece = Matrix::from_vec(
                        rows,
                        cols,
                        g.as_slice()[row * cols..(row + rows) * cols].to_vec(),
                    );
                    self.accumulate(adj, p, piece);
                    row += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let mut piece = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            piece[(i, j)] = g[(i, offset + j)];
                        }
                    }
                    self.accumulate(adj, p, piece);
                    offset += cols;
                }
            }
            Op::Flatten(a) => {
                let (rows, cols) = self.value(*a).shape();
                self.accumulate(adj, *a, Matrix::from_vec(rows, cols, g.as_slice().to_vec()));
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.value(*a).shape();
                let mut full = Matrix::zeros(rows, cols);
                full.as_mut_slice()[start * cols..start * cols + g.len()]
                    .copy_from_slice(g.as_slice());
                self.accumulate(adj, *a, full);
            }
            Op::LeakyRelu(a, slope) => {
                let da = self
                    .value(*a)
                    .zip_map(g, |x, gy| if x >= 0.0 { gy } else { slope * gy });
                self.accumulate(adj, *a, da);
            }
            Op::MaskedRowSoftmax(a, mask) => {
                let (rows, cols) = out.shape();
                let mut da = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let dot: f64 = (0..cols)
                        .filter(|&j| mask[i * cols + j])
                        .map(|j| y[j] * gy[j])
                        .sum();
                    for j in 0..cols {
                        if mask[i * cols + j] {
                            da[(i, j)] = y[j] * (gy[j] - dot);
                        }
                    }
                }
                self.accumulate(adj, *a, da);
            }
            Op::LogSoftmax(a) => {
                let total = g.sum();
                let da = out.zip_map(g, |ly, gy| gy - ly.exp() * total);
                self.accumulate(adj, *a, da);
            }
            Op::ColumnMean(a) => {
                let (rows, cols) = self.value(*a).shape();
                let mut da = Matrix::zeros(rows, cols);
                let n = rows as f64;
                for i in 0..rows {
                    for j in 0..cols {
                        da[(i, j)] = g.as_slice()[j] / n;
                    }
                }
                self.accumulate(adj, *a, da);
            }
            Op::ColumnMax(a, argmax) => {
                let (rows, cols) = self.value(*a).shape();
                let mut da = Matrix::zeros(rows, cols);
                for (j, &i) in argmax.iter().enumerate() {
                    da[(i, j)] = g.as_slice()[j];
                }
                self.accumulate(adj, *a, da);
            }
            Op::Exp(a) => self.accumulate(adj, *a, out.zip_map(g, |y, gy| y * gy)),
            Op::Ln(a) => {
                let da = self.value(*a).zip_map(g, |x, gy| gy / x);
                self.accumulate(adj, *a, da);
            }
            Op::Clamp(a, lo, hi) => {
                let da = self.value(*a).zip_map(g, |x, gy| {
                    if x >= *lo && x <= *hi {
                        gy
                    } else {
                        0.0
                    }
                });
                self.accumulate(adj, *a, da);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.value(*a).shape();
                self.accumulate(adj, *a, Matrix::filled(rows, cols, g.item()));
            }
            Op::SumSquares(a) => {
                let gy = g.item();
                self.accumulate(adj, *a, self.value(*a).map(|x| 2.0 * x * gy));
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if `v` is unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v` with unreachable slots reported as zeros of `shape`.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    /// Like [`Gradients::wrt`] but moves the adjoint out.
    pub fn take(&mut self, v: Var, shape: (usize, usize)) -> Matrix {
        self.adjoints
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

/// Numerically stable softmax of `scores` restricted to `index_set`; the
/// result is aligned with `index_set`.
///
/// Panics on an empty set.
pub fn softmax_over_set(scores: &[f64], index_set: &[usize]) -> Vec<f64> {
    assert!(!index_set.is_empty(), "softmax over an empty index set");
    let max = index_set
        .iter()
        .map(|&j| scores[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = index_set.iter().map(|&j| (scores[j] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Numerically stable log-softmax over all of `scores`.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "log_softmax of an empty vector");
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - max - log_total).collect()
}
