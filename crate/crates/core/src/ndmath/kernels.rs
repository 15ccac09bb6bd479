//! Forward kernels shared by the recording tape and by inference-only code paths.

use std::str::FromStr;

use super::tensor::ParamTensor;
use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Elu,
    Sigmoid,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => config(format!("unknown activation {other:?}")),
        }
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            // alpha = 1
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(kind: Activation, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| kind.apply(v)).collect()
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_affine(x_len: usize, w: &ParamTensor, b: &ParamTensor) -> Result<(usize, usize)> {
    let (rows, cols) = w.matrix_dims()?;
    if x_len != cols {
        return config(format!(
            "dense layer expects {cols} inputs, got {x_len}"
        ));
    }
    if b.len() != rows {
        return config(format!(
            "dense layer has {rows} outputs but bias of length {}",
            b.len()
        ));
    }
    Ok((rows, cols))
}

/// `y[i] = sum_j W[i, j] * x[j] + b[i]`.
pub fn dense_forward(x: &[f64], w: &ParamTensor, b: &ParamTensor) -> Result<Vec<f64>> {
    let (rows, cols) = check_affine(x.len(), w, b)?;
    let wv = w.values();
    let y: Vec<f64> = (0..rows)
        .map(|i| dot(&wv[i * cols..(i + 1) * cols], x) + b.values()[i])
        .collect();
    check_finite(&y, "dense_forward")?;
    Ok(y)
}

/// Dense layer over an input given as `(index, value)` pairs; all other inputs are zero.
pub fn dense_forward_sparse(
    input_len: usize,
    entries: &[(usize, f64)],
    w: &ParamTensor,
    b: &ParamTensor,
) -> Result<Vec<f64>> {
    let (rows, cols) = check_affine(input_len, w, b)?;
    if let Some(&(j, _)) = entries.iter().find(|&&(j, _)| j >= cols) {
        return config(format!("sparse input index {j} out of range {cols}"));
    }
    let wv = w.values();
    let mut y = b.values().to_vec();
    for (i, yi) in y.iter_mut().enumerate().take(rows) {
        let row = &wv[i * cols..(i + 1) * cols];
        for &(j, v) in entries {
            *yi += row[j] * v;
        }
    }
    check_finite(&y, "dense_forward_sparse")?;
    Ok(y)
}

/// Only the listed output rows of a dense layer.
pub fn dense_forward_rows(
    x: &[f64],
    w: &ParamTensor,
    b: &ParamTensor,
    rows: &[usize],
) -> Result<Vec<f64>> {
    let (n_rows, cols) = check_affine(x.len(), w, b)?;
    let wv = w.values();
    let mut y = Vec::with_capacity(rows.len());
    for &i in rows {
        if i >= n_rows {
            return config(format!("row {i} out of range {n_rows}"));
        }
        y.push(dot(&wv[i * cols..(i + 1) * cols], x) + b.values()[i]);
    }
    check_finite(&y, "dense_forward_rows")?;
    Ok(y)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize; order is fixed so
    // results stay bit-reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Parameters of a GRU cell with gates stacked in the order update, reset, candidate.
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
///
/// `w` is `[3H, D]`, `u` is `[3H, H]` and `b` is `[3H]`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a> {
    pub w: &'a ParamTensor,
    pub u: &'a ParamTensor,
    pub b: &'a ParamTensor,
}

/// Intermediate gate activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
}

impl GruParams<'_> {
    pub fn dims(&self) -> Result<(usize, usize)> {
        let (w_rows, d_in) = self.w.matrix_dims()?;
        let (u_rows, d_h) = self.u.matrix_dims()?;
        if w_rows != 3 * d_h || u_rows != 3 * d_h || self.b.len() != 3 * d_h {
            return config(format!(
                "inconsistent GRU shapes w={:?} u={:?} b={:?}",
                self.w.shape(),
                self.u.shape(),
                self.b.shape()
            ));
        }
        Ok((d_in, d_h))
    }
}

pub fn gru_cell(x: &[f64], h: &[f64], p: GruParams<'_>) -> Result<Vec<f64>> {
    gru_cell_cached(x, h, p).map(|(h_new, _)| h_new)
}

pub(crate) fn gru_cell_cached(
    x: &[f64],
    h: &[f64],
    p: GruParams<'_>,
) -> Result<(Vec<f64>, GruCache)> {
    let (d_in, d_h) = p.dims()?;
    if x.len() != d_in || h.len() != d_h {
        return config(format!(
            "GRU expects input {d_in} and hidden {d_h}, got {} and {}",
            x.len(),
            h.len()
        ));
    }
    let w = p.w.values();
    let u = p.u.values();
    let b = p.b.values();
    let wx = |row: usize| dot(&w[row * d_in..(row + 1) * d_in], x);
    let uh = |row: usize, v: &[f64]| dot(&u[row * d_h..(row + 1) * d_h], v);

    let mut z = vec![0.0; d_h];
    let mut r = vec![0.0; d_h];
    for i in 0..d_h {
        z[i] = sigmoid(wx(i) + uh(i, h) + b[i]);
        r[i] = sigmoid(wx(d_h + i) + uh(d_h + i, h) + b[d_h + i]);
    }
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let mut cand = vec![0.0; d_h];
    let mut h_new = vec![0.0; d_h];
    for i in 0..d_h {
        let row = 2 * d_h + i;
        cand[i] = (wx(row) + uh(row, &rh) + b[row]).tanh();
        h_new[i] = (1.0 - z[i]) * h[i] + z[i] * cand[i];
    }
    check_finite(&h_new, "gru_cell")?;
    Ok((h_new, GruCache { z, r, cand }))
}
