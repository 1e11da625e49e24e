//! Forward kernels shared by the taped and tape-free evaluation paths, so both
//! produce bitwise-identical values.

use alloc::vec::Vec;

use super::matrix::{MatRef, Matrix};
use crate::math;
use crate::rng::{self, Rng};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Adds a `1 x cols` (or `1 x 1`) row to every row of `a`.
pub fn add_row(a: &mut Matrix, row: &[f64]) {
    if row.len() == 1 {
        let b = row[0];
        for v in &mut a.data {
            *v += b;
        }
        return;
    }
    assert_eq!(row.len(), a.cols, "broadcast row width");
    for r in 0..a.rows {
        for (v, b) in a.row_mut(r).iter_mut().zip(row) {
            *v += b;
        }
    }
}

/// Per-row normalisation with affine scale/shift; returns `(y, xhat, inv_std)`.
pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> (Matrix, Vec<f64>, Vec<f64>) {
    let cols = x.cols;
    assert_eq!(gamma.len(), cols);
    assert_eq!(beta.len(), cols);
    let mut y = Matrix::zeros(x.rows, cols);
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let is = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
        inv_std.push(is);
        let out = y.row_mut(r);
        for c in 0..cols {
            let h = (row[c] - mean) * is;
            xhat.push(h);
            out[c] = gamma[c] * h + beta[c];
        }
    }
    (y, xhat, inv_std)
}

pub fn elu(x: &mut Matrix) {
    for v in &mut x.data {
        *v = math::elu(*v);
    }
}

pub fn softplus(x: &mut Matrix) {
    for v in &mut x.data {
        *v = math::softplus(*v);
    }
}

pub fn softmax_rows(x: &mut Matrix) {
    for r in 0..x.rows {
        math::softmax_in_place(x.row_mut(r));
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng::uniform(rng) < rate { 0.0 } else { keep })
        .collect()
}

/// `x * weight + bias`, with the bias preloaded into the accumulator.
pub fn affine(x: MatRef<'_>, weight: MatRef<'_>, bias: &[f64]) -> Matrix {
    assert_eq!(bias.len(), weight.cols, "bias width");
    let mut z = Matrix::zeros(x.rows, weight.cols);
    for r in 0..z.rows {
        z.row_mut(r).copy_from_slice(bias);
    }
    super::matrix::gemm(1.0, x, false, weight, false, 1.0, &mut z);
    z
}
