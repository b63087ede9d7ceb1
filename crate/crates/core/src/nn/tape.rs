//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! accumulates gradients for every node that contributed to it. The op set is
//! deliberately small: it covers affine layers, the activations used by the
//! bottlenecks, sparse message passing with differentiable edge weights, and
//! the row-wise reductions needed by the losses.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, softplus, Matrix};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub type Index = Rc<[usize]>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Ln(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    StraightThrough(Var),
    SumAll(Var),
    SumRows(Var),
    SliceCols(Var, usize),
    GatherRows(Var, Index),
    ScatterRows(Var, Index),
    RowDot(Var, Var),
    LogSoftmax(Var),
    PickPerRow(Var, Index),
    EdgeAggregate {
        x: Var,
        weight: Var,
        src: Index,
        dst: Index,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Records an input. Gradients are tracked for every leaf.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", (r, c), self.shape(row)),
            ));
        }
        let mut v = self.value(a).clone();
        let bias = self.value(row).data().to_vec();
        for i in 0..r {
            for (x, b) in v.row_mut(i).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, _) = self.shape(a);
        if self.shape(col) != (r, 1) {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} * {:?}", self.shape(a), self.shape(col)),
            ));
        }
        let mut v = self.value(a).clone();
        let s = self.value(col).data().to_vec();
        for (i, si) in s.iter().enumerate() {
            for x in v.row_mut(i) {
                *x *= si;
            }
        }
        Ok(self.push(v, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::Powf(a, p))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Forward: `1` where `a > 0.5`, else `0`. Backward: identity.
    pub fn straight_through(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.5 { 1.0 } else { 0.0 });
        self.push(v, Op::StraightThrough(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums as an `r x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::column((0..m.rows()).map(|i| m.row(i).iter().sum()).collect());
        self.push(v, Op::SumRows(a))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > c {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {c} columns"),
            ));
        }
        let m = self.value(a);
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&m.row(i)[start..end]);
        }
        let v = Matrix::from_vec(r, end - start, data)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Index) -> Result<Var> {
        let r = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {r}"),
            ));
        }
        let v = self.value(a).gather_rows(&idx);
        Ok(self.push(v, Op::GatherRows(a, idx)))
    }

    /// `out[idx[i]] += a[i]` into an `n`-row result.
    pub fn scatter_rows(&mut self, a: Var, idx: Index, n: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if idx.len() != r || idx.iter().any(|&i| i >= n) {
            return Err(Error::shape(
                "scatter_rows",
                format!("{} targets for {r} rows into {n}", idx.len()),
            ));
        }
        let mut v = Matrix::zeros(n, c);
        let m = self.value(a);
        for (i, &t) in idx.iter().enumerate() {
            for (d, s) in v.row_mut(t).iter_mut().zip(m.row(i)) {
                *d += s;
            }
        }
        Ok(self.push(v, Op::ScatterRows(a, idx)))
    }

    /// Row-wise inner products of two equally shaped matrices.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("row_dot", a, b)?;
        let (ma, mb) = (self.value(a), self.value(b));
        let v = Matrix::column((0..ma.rows()).map(|i| dot(ma.row(i), mb.row(i))).collect());
        Ok(self.push(v, Op::RowDot(a, b)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(v, Op::LogSoftmax(a))
    }

    /// `out[i] = a[i, idx[i]]` as a column.
    pub fn pick_per_row(&mut self, a: Var, idx: Index) -> Result<Var> {
        let (r, c) = self.shape(a);
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(Error::shape(
                "pick_per_row",
                format!("{} picks from {r}x{c}", idx.len()),
            ));
        }
        let m = self.value(a);
        let v = Matrix::column(idx.iter().enumerate().map(|(i, &j)| m[(i, j)]).collect());
        Ok(self.push(v, Op::PickPerRow(a, idx)))
    }

    /// Sparse message passing: `out[dst[e]] += weight[e] * x[src[e]]`.
    ///
    /// `weight` is an `E x 1` column and is differentiated like any other
    /// input, which lets edge weights depend on sampled neighbor masks.
    pub fn edge_aggregate(
        &mut self,
        x: Var,
        weight: Var,
        src: Index,
        dst: Index,
        n_out: usize,
    ) -> Result<Var> {
        let (r, c) = self.shape(x);
        let e = src.len();
        if dst.len() != e
            || self.shape(weight) != (e, 1)
            || src.iter().any(|&s| s >= r)
            || dst.iter().any(|&d| d >= n_out)
        {
            return Err(Error::shape(
                "edge_aggregate",
                format!(
                    "{e} edges, weight {:?}, x {:?}, {n_out} outputs",
                    self.shape(weight),
                    (r, c)
                ),
            ));
        }
        let mut v = Matrix::zeros(n_out, c);
        let xm = self.value(x);
        let w = self.value(weight).data();
        for k in 0..e {
            let wk = w[k];
            if wk == 0.0 {
                continue;
            }
            let srow = xm.row(src[k]);
            for (d, s) in v.row_mut(dst[k]).iter_mut().zip(srow) {
                *d += wk * s;
            }
        }
        Ok(self.push(
            v,
            Op::EdgeAggregate {
                x,
                weight,
                src,
                dst,
            },
        ))
    }

    /// Back-propagates from a `1 x 1` node. Gradients of earlier runs are
    /// discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.shape(root)),
            ));
        }
        let n = self.nodes.len();
        self.grads = vec![None; n];
        self.grads[root.0] = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last backward root with respect to `v`, or zeros when
    /// `v` did not contribute.
    pub fn grad(&self, v: Var) -> Matrix {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Matrix::zeros(r, c)
            }
        }
    }

    fn accumulate(&mut self, v: Var, g: Matrix) {
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, g: &Matrix) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(self.value(b));
                let gb = self.value(a).t_matmul(g);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(b), |x, y| x * y);
                let gb = g.zip_map(self.value(a), |x, y| x * y);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::AddRow(a, row) => {
                let mut gr = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, s) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                self.accumulate(a, g.clone());
                self.accumulate(row, gr);
            }
            Op::MulCol(a, col) => {
                let s = self.value(col).data().to_vec();
                let am = self.value(a);
                let mut ga = g.clone();
                let mut gc = Vec::with_capacity(s.len());
                for (r, sr) in s.iter().enumerate() {
                    gc.push(dot(g.row(r), am.row(r)));
                    for x in ga.row_mut(r) {
                        *x *= sr;
                    }
                }
                self.accumulate(a, ga);
                self.accumulate(col, Matrix::column(gc));
            }
            Op::Scale(a, k) => self.accumulate(a, g.map(|x| x * k)),
            Op::AddScalar(a) => self.accumulate(a, g.clone()),
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(a), |x, y| if y > 0.0 { x } else { 0.0 });
                self.accumulate(a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&self.nodes[i].value, |x, s| x * s * (1.0 - s));
                self.accumulate(a, ga);
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(a), |x, y| x * sigmoid(y));
                self.accumulate(a, ga);
            }
            Op::Ln(a) => {
                let ga = g.zip_map(self.value(a), |x, y| x / y);
                self.accumulate(a, ga);
            }
            Op::Powf(a, p) => {
                let ga = g.zip_map(self.value(a), |x, y| x * p * y.powf(p - 1.0));
                self.accumulate(a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let ga = g.zip_map(self.value(a), |x, y| if y < lo || y > hi { 0.0 } else { x });
                self.accumulate(a, ga);
            }
            Op::StraightThrough(a) => self.accumulate(a, g.clone()),
            Op::SumAll(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(a, Matrix::filled(r, c, g.item()));
            }
            Op::SumRows(a) => {
                let (r, c) = self.shape(a);
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    let gv = g[(row, 0)];
                    ga.row_mut(row).iter_mut().for_each(|x| *x = gv);
                }
                self.accumulate(a, ga);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(a);
                let mut ga = Matrix::zeros(r, c);
                let w = g.cols();
                for row in 0..r {
                    ga.row_mut(row)[start..start + w].copy_from_slice(g.row(row));
                }
                self.accumulate(a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.shape(a);
                let mut ga = Matrix::zeros(r, c);
                for (k, &t) in idx.iter().enumerate() {
                    for (d, s) in ga.row_mut(t).iter_mut().zip(g.row(k)) {
                        *d += s;
                    }
                }
                self.accumulate(a, ga);
            }
            Op::ScatterRows(a, idx) => {
                let ga = g.gather_rows(&idx);
                self.accumulate(a, ga);
            }
            Op::RowDot(a, b) => {
                let (ma, mb) = (self.value(a), self.value(b));
                let mut ga = mb.clone();
                let mut gb = ma.clone();
                for r in 0..ga.rows() {
                    let gr = g[(r, 0)];
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= gr);
                    gb.row_mut(r).iter_mut().for_each(|x| *x *= gr);
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::LogSoftmax(a) => {
                let out = &self.nodes[i].value;
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (x, &lp) in ga.row_mut(r).iter_mut().zip(out.row(r)) {
                        *x -= lp.exp() * total;
                    }
                }
                self.accumulate(a, ga);
            }
            Op::PickPerRow(a, idx) => {
                let (r, c) = self.shape(a);
                let mut ga = Matrix::zeros(r, c);
                for (row, &j) in idx.iter().enumerate() {
                    ga[(row, j)] = g[(row, 0)];
                }
                self.accumulate(a, ga);
            }
            Op::EdgeAggregate {
                x,
                weight,
                src,
                dst,
            } => {
                let xm = self.value(x);
                let w = self.value(weight).data();
                let mut gx = Matrix::zeros(xm.rows(), xm.cols());
                let mut gw = Vec::with_capacity(src.len());
                for k in 0..src.len() {
                    let grow = g.row(dst[k]);
                    gw.push(dot(grow, xm.row(src[k])));
                    let wk = w[k];
                    if wk != 0.0 {
                        for (d, s) in gx.row_mut(src[k]).iter_mut().zip(grow) {
                            *d += wk * s;
                        }
                    }
                }
                self.accumulate(x, gx);
                self.accumulate(weight, Matrix::column(gw));
            }
        }
    }
}
