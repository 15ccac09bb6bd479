//! Reverse-mode gradient tape over the small set of vector operations the agent and
//! mixing networks need.
//!
//! Every operation appends one node holding its output value (and any cached
//! intermediates). [`Tape::backward`] walks the nodes once in reverse, accumulating
//! parameter gradients into the [`ParamStore`] the tape was recorded against.

use super::kernels::{self, dot, Activation, GruCache, GruParams};
use super::tensor::{ParamId, ParamStore};
use crate::error::{config, usage, Result};

/// Handle to a node's output on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Dense { w: ParamId, b: ParamId, x: Var },
    DenseSparse { w: ParamId, b: ParamId, entries: Vec<(usize, f64)> },
    DenseRows { w: ParamId, b: ParamId, x: Var, rows: Vec<usize> },
    Act { kind: Activation, x: Var },
    Abs { x: Var },
    Gru { w: ParamId, u: ParamId, b: ParamId, x: Var, h: Var, cache: GruCache },
    Concat(Vec<Var>),
    MatVecT { m: Var, rows: usize, cols: usize, v: Var },
    Add { a: Var, b: Var },
    Sum { x: Var },
    Scale { x: Var, c: f64 },
    SquaredError { x: Var, target: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
    spent: bool,
}

impl Tape {
    /// Starts a tape bound to the current parameter values of `params`.
    pub fn new(params: &ParamStore) -> Self {
        Tape {
            nodes: Vec::new(),
            generation: params.generation(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn check_live(&self, params: &ParamStore) -> Result<()> {
        if self.spent {
            return usage("tape has already been replayed");
        }
        if params.generation() != self.generation {
            return usage("parameters changed since the tape was started");
        }
        Ok(())
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool, what: &'static str) -> Result<Var> {
        kernels::check_finite(&value, what)?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Result<Var> {
        self.push(value, Op::Leaf, false, "leaf")
    }

    /// The whole parameter tensor as a differentiable vector.
    pub fn param(&mut self, params: &ParamStore, id: ParamId) -> Result<Var> {
        self.check_live(params)?;
        let value = params.get(id).values().to_vec();
        self.push(value, Op::Param(id), true, "param")
    }

    pub fn dense(&mut self, params: &ParamStore, w: ParamId, b: ParamId, x: Var) -> Result<Var> {
        self.check_live(params)?;
        let y = kernels::dense_forward(self.value(x), params.get(w), params.get(b))?;
        self.push(y, Op::Dense { w, b, x }, true, "dense")
    }

    pub fn dense_sparse(
        &mut self,
        params: &ParamStore,
        w: ParamId,
        b: ParamId,
        input_len: usize,
        entries: Vec<(usize, f64)>,
    ) -> Result<Var> {
        self.check_live(params)?;
        let y = kernels::dense_forward_sparse(input_len, &entries, params.get(w), params.get(b))?;
        self.push(y, Op::DenseSparse { w, b, entries }, true, "dense_sparse")
    }

    pub fn dense_rows(
        &mut self,
        params: &ParamStore,
        w: ParamId,
        b: ParamId,
        x: Var,
        rows: Vec<usize>,
    ) -> Result<Var> {
        self.check_live(params)?;
        let y = kernels::dense_forward_rows(self.value(x), params.get(w), params.get(b), &rows)?;
        self.push(y, Op::DenseRows { w, b, x, rows }, true, "dense_rows")
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let y = kernels::activation(kind, self.value(x));
        let ng = self.needs(x);
        self.push(y, Op::Act { kind, x }, ng, "activation")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).iter().map(|v| v.abs()).collect();
        let ng = self.needs(x);
        self.push(y, Op::Abs { x }, ng, "abs")
    }

    pub fn gru(
        &mut self,
        params: &ParamStore,
        (w, u, b): (ParamId, ParamId, ParamId),
        x: Var,
        h: Var,
    ) -> Result<Var> {
        self.check_live(params)?;
        let p = GruParams {
            w: params.get(w),
            u: params.get(u),
            b: params.get(b),
        };
        let (h_new, cache) = kernels::gru_cell_cached(self.value(x), self.value(h), p)?;
        self.push(h_new, Op::Gru { w, u, b, x, h, cache }, true, "gru")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut y = Vec::new();
        for &p in parts {
            y.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(y, Op::Concat(parts.to_vec()), ng, "concat")
    }

    /// `y[j] = sum_i m[i * cols + j] * v[i]`: the transpose of a row-major `[rows, cols]`
    /// matrix applied to `v`.
    pub fn matvec_t(&mut self, m: Var, rows: usize, cols: usize, v: Var) -> Result<Var> {
        let (mv, vv) = (self.value(m), self.value(v));
        if mv.len() != rows * cols || vv.len() != rows {
            return config(format!(
                "matvec_t expects a {rows}x{cols} matrix and length-{rows} vector, got {} and {}",
                mv.len(),
                vv.len()
            ));
        }
        let mut y = vec![0.0; cols];
        for (i, &vi) in vv.iter().enumerate() {
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += mv[i * cols + j] * vi;
            }
        }
        let ng = self.needs(m) || self.needs(v);
        self.push(y, Op::MatVecT { m, rows, cols, v }, ng, "matvec_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return config(format!("add of lengths {} and {}", av.len(), bv.len()));
        }
        let y = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(y, Op::Add { a, b }, ng, "add")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = vec![self.value(x).iter().sum()];
        let ng = self.needs(x);
        self.push(y, Op::Sum { x }, ng, "sum")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let y = self.value(x).iter().map(|v| v * c).collect();
        let ng = self.needs(x);
        self.push(y, Op::Scale { x, c }, ng, "scale")
    }

    /// `sum_i (x[i] - target[i])^2` as a scalar.
    pub fn squared_error(&mut self, x: Var, target: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != target.len() {
            return config(format!(
                "squared_error of lengths {} and {}",
                xv.len(),
                target.len()
            ));
        }
        let y = vec![xv.iter().zip(&target).map(|(a, t)| (a - t) * (a - t)).sum()];
        let ng = self.needs(x);
        self.push(y, Op::SquaredError { x, target }, ng, "squared_error")
    }

    /// Back-propagates `seed * d(root)` through every recorded operation, adding the
    /// result into the gradient fields of `params`. A tape can be replayed once.
    pub fn backward(&mut self, params: &mut ParamStore, root: Var, seed: f64) -> Result<()> {
        if self.nodes.is_empty() {
            return usage("backward on an empty tape");
        }
        self.check_live(params)?;
        if self.nodes[root.0].value.len() != 1 {
            return usage("backward root must be a scalar");
        }
        self.spent = true;

        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(vec![seed]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    for (pg, gi) in params.get_mut(*id).grad_mut().iter_mut().zip(&g) {
                        *pg += gi;
                    }
                }
                Op::Dense { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    let dx = dense_backward(params, *w, *b, xv, &g, self.nodes[x.0].needs_grad);
                    if let Some(dx) = dx {
                        accumulate(&mut adj, *x, &dx);
                    }
                }
                Op::DenseSparse { w, b, entries } => {
                    let cols = params.get(*w).shape()[1];
                    let (wt, bt) = (*w, *b);
                    {
                        let wg = params.get_mut(wt).grad_mut();
                        for (row, gi) in g.iter().enumerate() {
                            for &(j, v) in entries {
                                wg[row * cols + j] += gi * v;
                            }
                        }
                    }
                    for (bg, gi) in params.get_mut(bt).grad_mut().iter_mut().zip(&g) {
                        *bg += gi;
                    }
                }
                Op::DenseRows { w, b, x, rows } => {
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.len();
                    let want_dx = self.nodes[x.0].needs_grad;
                    let mut dx = vec![0.0; if want_dx { cols } else { 0 }];
                    {
                        let wt = params.get_mut(*w);
                        let (wv, wg) = wt.parts_mut();
                        for (&row, &gi) in rows.iter().zip(&g) {
                            let base = row * cols;
                            for j in 0..cols {
                                wg[base + j] += gi * xv[j];
                            }
                            if want_dx {
                                for j in 0..cols {
                                    dx[j] += wv[base + j] * gi;
                                }
                            }
                        }
                    }
                    let bg = params.get_mut(*b).grad_mut();
                    for (&row, &gi) in rows.iter().zip(&g) {
                        bg[row] += gi;
                    }
                    if want_dx {
                        accumulate(&mut adj, *x, &dx);
                    }
                }
                Op::Act { kind, x } => {
                    let xv = &self.nodes[x.0].value;
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv.iter().zip(&node.value))
                        .map(|(gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                        .collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Abs { x } => {
                    let xv = &self.nodes[x.0].value;
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(gi, &xi)| if xi >= 0.0 { *gi } else { -gi })
                        .collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Gru { w, u, b, x, h, cache } => {
                    let xv = &self.nodes[x.0].value;
                    let hv = &self.nodes[h.0].value;
                    let (dx, dh) = gru_backward(params, (*w, *u, *b), xv, hv, cache, &g);
                    if self.nodes[x.0].needs_grad {
                        accumulate(&mut adj, *x, &dx);
                    }
                    if self.nodes[h.0].needs_grad {
                        accumulate(&mut adj, *h, &dh);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.len();
                        if self.nodes[p.0].needs_grad {
                            accumulate(&mut adj, p, &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                Op::MatVecT { m, rows, cols, v } => {
                    let mv = &self.nodes[m.0].value;
                    let vv = &self.nodes[v.0].value;
                    if self.nodes[m.0].needs_grad {
                        let mut dm = vec![0.0; rows * cols];
                        for i in 0..*rows {
                            for j in 0..*cols {
                                dm[i * cols + j] = g[j] * vv[i];
                            }
                        }
                        accumulate(&mut adj, *m, &dm);
                    }
                    if self.nodes[v.0].needs_grad {
                        let dv: Vec<f64> = (0..*rows)
                            .map(|i| dot(&mv[i * cols..(i + 1) * cols], &g))
                            .collect();
                        accumulate(&mut adj, *v, &dv);
                    }
                }
                Op::Add { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut adj, *a, &g);
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut adj, *b, &g);
                    }
                }
                Op::Sum { x } => {
                    let n = self.nodes[x.0].value.len();
                    accumulate(&mut adj, *x, &vec![g[0]; n]);
                }
                Op::Scale { x, c } => {
                    let dx: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::SquaredError { x, target } => {
                    let xv = &self.nodes[x.0].value;
                    let dx: Vec<f64> = xv
                        .iter()
                        .zip(target)
                        .map(|(a, t)| 2.0 * (a - t) * g[0])
                        .collect();
                    accumulate(&mut adj, *x, &dx);
                }
            }
        }
        params.mark_grads_populated();
        for (_, t) in params.iter() {
            kernels::check_finite(t.grad(), "backward")?;
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, gi)| *e += gi),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn dense_backward(
    params: &mut ParamStore,
    w: ParamId,
    b: ParamId,
    x: &[f64],
    g: &[f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let cols = x.len();
    let mut dx = if want_dx { Some(vec![0.0; cols]) } else { None };
    {
        let wt = params.get_mut(w);
        let (wv, wg) = wt.parts_mut();
        for (row, &gi) in g.iter().enumerate() {
            let base = row * cols;
            if gi != 0.0 {
                for j in 0..cols {
                    wg[base + j] += gi * x[j];
                }
            }
            if let Some(dx) = dx.as_mut() {
                for j in 0..cols {
                    dx[j] += wv[base + j] * gi;
                }
            }
        }
    }
    for (bg, gi) in params.get_mut(b).grad_mut().iter_mut().zip(g) {
        *bg += gi;
    }
    dx
}

fn gru_backward(
    params: &mut ParamStore,
    (w, u, b): (ParamId, ParamId, ParamId),
    x: &[f64],
    h: &[f64],
    cache: &GruCache,
    dh_new: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d_in = x.len();
    let d_h = h.len();
    let GruCache { z, r, cand } = cache;

    // Pre-activation gradients for the three stacked gates.
    let mut da = vec![0.0; 3 * d_h];
    let mut dh = vec![0.0; d_h];
    for i in 0..d_h {
        dh[i] = dh_new[i] * (1.0 - z[i]);
        let dz = dh_new[i] * (cand[i] - h[i]);
        da[i] = dz * z[i] * (1.0 - z[i]);
        let dcand = dh_new[i] * z[i];
        da[2 * d_h + i] = dcand * (1.0 - cand[i] * cand[i]);
    }
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();

    // d(r*h) = U_h^T da_h
    let mut drh = vec![0.0; d_h];
    {
        let uv = params.get(u).values();
        for i in 0..d_h {
            let gi = da[2 * d_h + i];
            let row = &uv[(2 * d_h + i) * d_h..(2 * d_h + i + 1) * d_h];
            for j in 0..d_h {
                drh[j] += row[j] * gi;
            }
        }
    }
    for i in 0..d_h {
        let dr = drh[i] * h[i];
        da[d_h + i] = dr * r[i] * (1.0 - r[i]);
        dh[i] += drh[i] * r[i];
    }

    let mut dx = vec![0.0; d_in];
    {
        let wt = params.get_mut(w);
        let (wv, wg) = wt.parts_mut();
        for (row, &gi) in da.iter().enumerate() {
            let base = row * d_in;
            for j in 0..d_in {
                wg[base + j] += gi * x[j];
                dx[j] += wv[base + j] * gi;
            }
        }
    }
    {
        let ut = params.get_mut(u);
        let (uv, ug) = ut.parts_mut();
        for (row, &gi) in da.iter().enumerate() {
            let base = row * d_h;
            // The candidate gate sees r*h, the other two see h.
            let input = if row >= 2 * d_h { &rh } else { h };
            for j in 0..d_h {
                ug[base + j] += gi * input[j];
            }
            if row < 2 * d_h {
                for j in 0..d_h {
                    dh[j] += uv[base + j] * gi;
                }
            }
        }
    }
    for (bg, gi) in params.get_mut(b).grad_mut().iter_mut().zip(&da) {
        *bg += gi;
    }
    (dx, dh)
}
