//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse creation order and
//! accumulates adjoints, skipping subgraphs that do not depend on a
//! parameter leaf. Shape errors are programming errors and panic.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Affine(usize, usize, usize),
    AddRow(usize, usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Elu(usize),
    Dropout(usize, Vec<f64>),
    Softplus(usize),
    Softmax(usize),
    Ln(usize),
    XLogX(usize),
    Mul(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    WeightedSum(usize, Vec<f64>),
    RowRange(usize, usize),
    ConcatCols(Vec<usize>),
    SumBlocks(usize, usize),
    SelectRows(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node with respect to one scalar output.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
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

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// A leaf the output is differentiated with respect to.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!((m.rows, m.cols), (1, 1), "scalar node");
        m.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = super::matrix::matmul(self.value(a).into(), self.value(b).into());
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::MatMul(a.0, b.0), ng)
    }

    /// `a + row` where `row` is `1 x a.cols` or `1 x 1`, broadcast over rows.
    /// `x * w + b` for a `1 x cols` bias row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let value = kernels::affine(
            self.value(x).into(),
            self.value(w).into(),
            &self.value(b).data,
        );
        let ng = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        self.push(value, Op::Affine(x.0, w.0, b.0), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut value = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.rows, 1, "broadcast row");
        kernels::add_row(&mut value, &r.data);
        let ng = self.needs(a.0) || self.needs(row.0);
        self.push(value, Op::AddRow(a.0, row.0), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (value, xhat, inv_std) = kernels::layer_norm(
            self.value(x),
            &self.value(gamma).data,
            &self.value(beta).data,
        );
        let ng = self.needs(x.0) || self.needs(gamma.0) || self.needs(beta.0);
        self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        kernels::elu(&mut value);
        let ng = self.needs(x.0);
        self.push(value, Op::Elu(x.0), ng)
    }

    /// Inverted dropout with a fresh mask drawn from `rng`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Var {
        let mask = kernels::dropout_mask(self.value(x).len(), rate, rng);
        let mut value = self.value(x).clone();
        for (v, m) in value.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        let ng = self.needs(x.0);
        self.push(value, Op::Dropout(x.0, mask), ng)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        kernels::softplus(&mut value);
        let ng = self.needs(x.0);
        self.push(value, Op::Softplus(x.0), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        kernels::softmax_rows(&mut value);
        let ng = self.needs(x.0);
        self.push(value, Op::Softmax(x.0), ng)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for v in &mut value.data {
            *v = math::ln(*v);
        }
        let ng = self.needs(x.0);
        self.push(value, Op::Ln(x.0), ng)
    }

    /// Elementwise `x ln x` with `0 ln 0 = 0`.
    pub fn xlogx(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for v in &mut value.data {
            *v = math::xlogx(*v);
        }
        let ng = self.needs(x.0);
        self.push(value, Op::XLogX(x.0), ng)
    }

    /// Elementwise product of equally shaped nodes.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "mul shapes");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let value = Matrix::from_vec(va.rows, va.cols, data);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Mul(a.0, b.0), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "add shapes");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let value = Matrix::from_vec(va.rows, va.cols, data);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Add(a.0, b.0), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        for v in &mut value.data {
            *v *= c;
        }
        let ng = self.needs(a.0);
        self.push(value, Op::Scale(a.0, c), ng)
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.needs(a.0);
        self.push(Matrix::scalar(s), Op::Sum(a.0), ng)
    }

    /// Row sums, `rows x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = (0..va.rows).map(|r| va.row(r).iter().sum()).collect();
        let ng = self.needs(a.0);
        self.push(Matrix::column(data), Op::SumRows(a.0), ng)
    }

    /// Column sums, `1 x cols`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = vec![0.0; va.cols];
        for r in 0..va.rows {
            for (o, v) in out.iter_mut().zip(va.row(r)) {
                *o += v;
            }
        }
        let value = Matrix::from_vec(1, va.cols, out);
        let ng = self.needs(a.0);
        self.push(value, Op::SumCols(a.0), ng)
    }

    /// `sum_k w_k a_k` over the row-major entries of `a`, with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), weights.len(), "weighted_sum length");
        let s = va.data.iter().zip(&weights).map(|(x, w)| x * w).sum();
        let ng = self.needs(a.0);
        self.push(Matrix::scalar(s), Op::WeightedSum(a.0, weights), ng)
    }

    /// Rows `start..end` of `a`.
    pub fn row_range(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.rows, "row range");
        let data = va.data[start * va.cols..end * va.cols].to_vec();
        let value = Matrix::from_vec(end - start, va.cols, data);
        let ng = self.needs(a.0);
        self.push(value, Op::RowRange(a.0, start), ng)
    }

    /// Horizontal concatenation of nodes with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let vp = self.value(*p);
            assert_eq!(vp.rows, rows, "concat rows");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + vp.cols].copy_from_slice(vp.row(r));
            }
            offset += vp.cols;
        }
        let ng = parts.iter().any(|p| self.needs(p.0));
        let ids = parts.iter().map(|p| p.0).collect();
        self.push(value, Op::ConcatCols(ids), ng)
    }

    /// Sums consecutive blocks of `block` rows: `(n * block) x c -> n x c`.
    pub fn sum_blocks(&mut self, a: Var, block: usize) -> Var {
        let va = self.value(a);
        assert!(block > 0 && va.rows.is_multiple_of(block), "block rows");
        let n = va.rows / block;
        let mut value = Matrix::zeros(n, va.cols);
        for r in 0..va.rows {
            let out = value.row_mut(r / block);
            for (o, v) in out.iter_mut().zip(va.row(r)) {
                *o += v;
            }
        }
        let ng = self.needs(a.0);
        self.push(value, Op::SumBlocks(a.0, block), ng)
    }

    /// Rows of `a` picked by `indices` (repeats allowed).
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let va = self.value(a);
        let mut value = Matrix::zeros(indices.len(), va.cols);
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).copy_from_slice(va.row(i));
        }
        let ng = self.needs(a.0);
        self.push(value, Op::SelectRows(a.0, indices.to_vec()), ng)
    }

    /// Fails with [`Error::NonFinite`] if any recorded value is not finite.
    pub fn check_finite(&self) -> Result<()> {
        if self
            .nodes
            .iter()
            .all(|n| n.value.data.iter().all(|v| v.is_finite()))
        {
            Ok(())
        } else {
            Err(Error::NonFinite("computation graph"))
        }
    }

    /// Reverse sweep from the `1 x 1` node `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        assert_eq!(self.value(output).len(), 1, "backward from non-scalar");
        grads[output.0] = Some(Matrix::scalar(1.0));

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], target: usize, delta: Matrix) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => {
                for (e, d) in existing.data.iter_mut().zip(&delta.data) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn map_grad(&self, g: &Matrix, f: impl Fn(usize, f64) -> f64) -> Matrix {
        let data = g.data.iter().enumerate().map(|(k, &gv)| f(k, gv)).collect();
        Matrix::from_vec(g.rows, g.cols, data)
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.needs(a) {
                    let mut da = Matrix::zeros(va.rows, va.cols);
                    gemm(1.0, g.into(), false, vb.into(), true, 0.0, &mut da);
                    self.accumulate(grads, a, da);
                }
                if self.needs(b) {
                    let mut db = Matrix::zeros(vb.rows, vb.cols);
                    gemm(1.0, va.into(), true, g.into(), false, 0.0, &mut db);
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Affine(x, w, b) => {
                let (vx, vw) = (&self.nodes[x].value, &self.nodes[w].value);
                if self.needs(x) {
                    let mut dx = Matrix::zeros(vx.rows, vx.cols);
                    gemm(1.0, g.into(), false, vw.into(), true, 0.0, &mut dx);
                    self.accumulate(grads, x, dx);
                }
                if self.needs(w) {
                    let mut dw = Matrix::zeros(vw.rows, vw.cols);
                    gemm(1.0, vx.into(), true, g.into(), false, 0.0, &mut dw);
                    self.accumulate(grads, w, dw);
                }
                if self.needs(b) {
                    let mut db = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in db.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::AddRow(a, row) => {
                if self.needs(a) {
                    self.accumulate(grads, a, g.clone());
                }
                if self.needs(row) {
                    let width = self.nodes[row].value.cols;
                    let mut dr = Matrix::zeros(1, width);
                    if width == 1 {
                        dr.data[0] = g.data.iter().sum();
                    } else {
                        for r in 0..g.rows {
                            for (o, v) in dr.data.iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                    self.accumulate(grads, row, dr);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = g.cols;
                let gam = &self.nodes[*gamma].value.data;
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = Matrix::zeros(1, cols);
                    let mut db = Matrix::zeros(1, cols);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let xr = &xhat[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dg.data[c] += gr[c] * xr[c];
                            db.data[c] += gr[c];
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                    self.accumulate(grads, *beta, db);
                }
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(g.rows, cols);
                    let m = cols as f64;
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let xr = &xhat[r * cols..(r + 1) * cols];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..cols {
                            let dh = gr[c] * gam[c];
                            s1 += dh;
                            s2 += dh * xr[c];
                        }
                        let is = inv_std[r];
                        let out = dx.row_mut(r);
                        for c in 0..cols {
                            let dh = gr[c] * gam[c];
                            out[c] = is / m * (m * dh - s1 - xr[c] * s2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            &Op::Elu(x) => {
                let y = &node.value.data;
                let d = self.map_grad(g, |k, gv| if y[k] > 0.0 { gv } else { gv * (y[k] + 1.0) });
                self.accumulate(grads, x, d);
            }
            Op::Dropout(x, mask) => {
                let d = self.map_grad(g, |k, gv| gv * mask[k]);
                self.accumulate(grads, *x, d);
            }
            &Op::Softplus(x) => {
                let xv = &self.nodes[x].value.data;
                let d = self.map_grad(g, |k, gv| gv * math::sigmoid(xv[k]));
                self.accumulate(grads, x, d);
            }
            &Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, x, dx);
            }
            &Op::Ln(x) => {
                let xv = &self.nodes[x].value.data;
                let d = self.map_grad(g, |k, gv| gv / xv[k]);
                self.accumulate(grads, x, d);
            }
            &Op::XLogX(x) => {
                let xv = &self.nodes[x].value.data;
                let d = self.map_grad(g, |k, gv| gv * (math::ln(xv[k].max(math::TINY)) + 1.0));
                self.accumulate(grads, x, d);
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a].value.data, &self.nodes[b].value.data);
                if self.needs(a) {
                    let d = self.map_grad(g, |k, gv| gv * vb[k]);
                    self.accumulate(grads, a, d);
                }
                if self.needs(b) {
                    let d = self.map_grad(g, |k, gv| gv * va[k]);
                    self.accumulate(grads, b, d);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Scale(a, c) => {
                let d = self.map_grad(g, |_, gv| gv * c);
                self.accumulate(grads, a, d);
            }
            &Op::Sum(a) => {
                let va = &self.nodes[a].value;
                let d = Matrix::from_vec(va.rows, va.cols, vec![g.data[0]; va.len()]);
                self.accumulate(grads, a, d);
            }
            &Op::SumRows(a) => {
                let va = &self.nodes[a].value;
                let mut d = Matrix::zeros(va.rows, va.cols);
                for r in 0..va.rows {
                    d.row_mut(r).fill(g.data[r]);
                }
                self.accumulate(grads, a, d);
            }
            &Op::SumCols(a) => {
                let va = &self.nodes[a].value;
                let mut d = Matrix::zeros(va.rows, va.cols);
                for r in 0..va.rows {
                    d.row_mut(r).copy_from_slice(&g.data);
                }
                self.accumulate(grads, a, d);
            }
            Op::WeightedSum(a, w) => {
                let va = &self.nodes[*a].value;
                let gv = g.data[0];
                let d = Matrix::from_vec(va.rows, va.cols, w.iter().map(|x| x * gv).collect());
                self.accumulate(grads, *a, d);
            }
            &Op::RowRange(a, start) => {
                let va = &self.nodes[a].value;
                let mut d = Matrix::zeros(va.rows, va.cols);
                d.data[start * va.cols..start * va.cols + g.len()].copy_from_slice(&g.data);
                self.accumulate(grads, a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vp = &self.nodes[p].value;
                    if self.needs(p) {
                        let mut d = Matrix::zeros(vp.rows, vp.cols);
                        for r in 0..vp.rows {
                            d.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + vp.cols]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += vp.cols;
                }
            }
            &Op::SumBlocks(a, block) => {
                let va = &self.nodes[a].value;
                let mut d = Matrix::zeros(va.rows, va.cols);
                for r in 0..va.rows {
                    d.row_mut(r).copy_from_slice(g.row(r / block));
                }
                self.accumulate(grads, a, d);
            }
            Op::SelectRows(a, indices) => {
                let va = &self.nodes[*a].value;
                let mut d = Matrix::zeros(va.rows, va.cols);
                for (r, &i) in indices.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}
