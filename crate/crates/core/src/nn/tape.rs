//! Reverse-mode differentiation over a recorded trace of batched row operations.
//!
//! The op set is deliberately small: affine maps, `tanh`, elementwise
//! arithmetic, reductions, column concatenation, row gather / scatter-sum and
//! the per-row triangular products used to build GENERIC operators.

use std::sync::Arc;

use super::activation::tanh_in_place;
use super::tensor::{affine_bt, matmul, matmul_at, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Destination-major incoming lists for scatter-sum. Row `d` of the output is
/// the sum of input rows `sources[offsets[d]..offsets[d + 1]]`, added in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
}

impl Segments {
    pub fn n_out(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn segment(&self, d: usize) -> &[usize] {
        &self.sources[self.offsets[d]..self.offsets[d + 1]]
    }

    /// Row-wise sum of `input` (`rows x cols`) into `out` (`n_out x cols`).
    pub fn sum_rows(&self, input: &[f64], cols: usize, out: &mut [f64]) {
        for d in 0..self.n_out() {
            let dst = &mut out[d * cols..(d + 1) * cols];
            dst.fill(0.0);
            for &s in self.segment(d) {
                let src = &input[s * cols..(s + 1) * cols];
                for (o, x) in dst.iter_mut().zip(src) {
                    *o += x;
                }
            }
        }
    }
}

/// Triangular fill patterns for per-row operator assembly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriKind {
    /// `y = (T - T^T) x` with `T` strictly lower triangular.
    Skew,
    /// `y = A x` with `A` lower triangular including the diagonal.
    Lower,
    /// `y = A^T x` with `A` lower triangular including the diagonal.
    LowerTransposed,
}

impl TriKind {
    pub fn n_params(self, dim: usize) -> usize {
        match self {
            TriKind::Skew => dim * (dim - 1) / 2,
            TriKind::Lower | TriKind::LowerTransposed => dim * (dim + 1) / 2,
        }
    }

    /// Row-major position of entry `(i, j)` in the packed parameter vector.
    #[inline]
    pub fn index(self, i: usize, j: usize) -> usize {
        match self {
            TriKind::Skew => i * (i - 1) / 2 + j,
            TriKind::Lower | TriKind::LowerTransposed => i * (i + 1) / 2 + j,
        }
    }

    fn dim_for(self, n_params: usize) -> Option<usize> {
        (1..64).find(|&d| self.n_params(d) == n_params)
    }

    /// Forward product for one row.
    pub fn apply(self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let d = x.len();
        y.fill(0.0);
        match self {
            TriKind::Skew => {
                for i in 1..d {
                    for j in 0..i {
                        let t = p[self.index(i, j)];
                        y[i] += t * x[j];
                        y[j] -= t * x[i];
                    }
                }
            }
            TriKind::Lower => {
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += p[self.index(i, j)] * x[j];
                    }
                    y[i] = acc;
                }
            }
            TriKind::LowerTransposed => {
                for i in 0..d {
                    for j in 0..=i {
                        y[j] += p[self.index(i, j)] * x[i];
                    }
                }
            }
        }
    }

    /// Accumulates parameter and input gradients for one row.
    fn backward(self, p: &[f64], x: &[f64], gy: &[f64], gp: &mut [f64], gx: &mut [f64]) {
        let d = x.len();
        match self {
            TriKind::Skew => {
                for i in 1..d {
                    for j in 0..i {
                        let k = self.index(i, j);
                        gp[k] += gy[i] * x[j] - gy[j] * x[i];
                        gx[j] += p[k] * gy[i];
                        gx[i] -= p[k] * gy[j];
                    }
                }
            }
            TriKind::Lower => {
                for i in 0..d {
                    for j in 0..=i {
                        let k = self.index(i, j);
                        gp[k] += gy[i] * x[j];
                        gx[j] += p[k] * gy[i];
                    }
                }
            }
            TriKind::LowerTransposed => {
                for i in 0..d {
                    for j in 0..=i {
                        let k = self.index(i, j);
                        gp[k] += gy[j] * x[i];
                        gx[i] += p[k] * gy[j];
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(usize),
    /// `y = x W^T + b`, `W` stored `out x in`.
    Linear { x: Var, w: Var, b: Var },
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterSum(Var, Arc<Segments>),
    Tri { kind: TriKind, p: Var, x: Var },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation. A trace supports exactly one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients from one backward pass.
pub struct Gradients {
    by_var: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_var[v.0].as_ref()
    }

    /// Gradient of the parameter registered under `id` (summed over every use).
    pub fn param(&self, id: usize) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for &(pid, var) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.by_var[var] {
                match &mut acc {
                    None => acc = Some(g.clone()),
                    Some(a) => {
                        for (x, y) in a.data.iter_mut().zip(&g.data) {
                            *x += y;
                        }
                    }
                }
            }
        }
        acc
    }

    /// Adds every parameter gradient into `out[id]`.
    pub fn accumulate_params(&self, out: &mut [Tensor]) {
        for &(pid, var) in &self.params {
            if let Some(g) = &self.by_var[var] {
                for (x, y) in out[pid].data.iter_mut().zip(&g.data) {
                    *x += y;
                }
            }
        }
    }
}

fn mismatch(expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    /// Registers a parameter value under a caller-chosen id.
    pub fn param(&mut self, id: usize, t: &Tensor) -> Var {
        self.push(Op::Param(id), t.clone())
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x), self.value(w), self.value(b));
        if ws.shape.len() != 2 || xs.cols() != ws.shape[1] {
            return Err(mismatch(&[xs.rows(), ws.shape.get(1).copied().unwrap_or(0)], &xs.shape));
        }
        let (m, k, n) = (xs.rows(), ws.shape[1], ws.shape[0]);
        if bs.len() != n {
            return Err(mismatch(&[n], &bs.shape));
        }
        let mut out = vec![0.0; m * n];
        affine_bt(m, k, n, &xs.data, &ws.data, &bs.data, &mut out);
        Ok(self.push(Op::Linear { x, w, b }, Tensor { shape: vec![m, n], data: out }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        tanh_in_place(&mut t.data);
        self.push(Op::Tanh(x), t)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(mismatch(&av.shape, &bv.shape));
        }
        Ok(Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xs = self.value(x);
        let t = Tensor {
            shape: xs.shape.clone(),
            data: xs.data.iter().map(|v| v * s).collect(),
        };
        self.push(Op::Scale(x, s), t)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data.iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(mismatch(&[rows, v.cols()], &v.shape));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor {
                shape: vec![rows, total],
                data,
            },
        ))
    }

    pub fn gather_rows(&mut self, x: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let xs = self.value(x);
        let c = xs.cols();
        if let Some(&bad) = index.iter().find(|&&i| i >= xs.rows()) {
            return Err(Error::invalid(format!("gather index {bad} out of range for {} rows", xs.rows())));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(xs.row(i));
        }
        let t = Tensor {
            shape: vec![index.len(), c],
            data,
        };
        Ok(self.push(Op::GatherRows(x, index), t))
    }

    pub fn scatter_sum(&mut self, x: Var, segments: Arc<Segments>) -> Result<Var> {
        let xs = self.value(x);
        if let Some(&bad) = segments.sources.iter().find(|&&i| i >= xs.rows()) {
            return Err(Error::invalid(format!("scatter source {bad} out of range for {} rows", xs.rows())));
        }
        let c = xs.cols();
        let mut out = vec![0.0; segments.n_out() * c];
        segments.sum_rows(&xs.data, c, &mut out);
        let t = Tensor {
            shape: vec![segments.n_out(), c],
            data: out,
        };
        Ok(self.push(Op::ScatterSum(x, segments), t))
    }

    /// Row-wise triangular product: row `r` of `p` packs one operator applied to row `r` of `x`.
    pub fn tri(&mut self, kind: TriKind, p: Var, x: Var) -> Result<Var> {
        let (ps, xs) = (self.value(p), self.value(x));
        let d = xs.cols();
        if ps.rows() != xs.rows() || kind.dim_for(ps.cols()) != Some(d) {
            return Err(mismatch(&[xs.rows(), kind.n_params(d)], &ps.shape));
        }
        let mut out = vec![0.0; xs.rows() * d];
        for r in 0..xs.rows() {
            kind.apply(ps.row(r), xs.row(r), &mut out[r * d..(r + 1) * d]);
        }
        let t = Tensor {
            shape: vec![xs.rows(), d],
            data: out,
        };
        Ok(self.push(Op::Tri { kind, p, x }, t))
    }

    /// Reverse accumulation from `output` seeded with `upstream`.
    pub fn backward(&mut self, output: Var, upstream: Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleTrace);
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::StaleTrace);
        }
        if upstream.shape != self.value(output).shape {
            return Err(mismatch(&self.value(output).shape, &upstream.shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(upstream);

        fn acc(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], f: impl FnOnce(&mut [f64])) {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
            f(&mut slot.data);
        }

        for idx in (0..=output.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Linear { x, w, b } => {
                    let xs = &self.nodes[x.0].value;
                    let ws = &self.nodes[w.0].value;
                    let (m, k, n) = (xs.rows(), ws.shape[1], ws.shape[0]);
                    acc(&mut grads, *x, &xs.shape, |g| matmul(m, n, k, &gy.data, &ws.data, g, true));
                    acc(&mut grads, *w, &ws.shape, |g| matmul_at(n, m, k, &gy.data, &xs.data, g, true));
                    let bshape = self.nodes[b.0].value.shape.clone();
                    acc(&mut grads, *b, &bshape, |g| {
                        for r in 0..m {
                            for (gi, y) in g.iter_mut().zip(&gy.data[r * n..(r + 1) * n]) {
                                *gi += y;
                            }
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = &node.value.data;
                    acc(&mut grads, *x, &node.value.shape, |g| {
                        for ((gi, yi), gyi) in g.iter_mut().zip(y).zip(&gy.data) {
                            *gi += gyi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        acc(&mut grads, v, &gy.shape, |g| {
                            for (gi, y) in g.iter_mut().zip(&gy.data) {
                                *gi += y;
                            }
                        });
                    }
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &gy.shape, |g| {
                        for (gi, y) in g.iter_mut().zip(&gy.data) {
                            *gi += y;
                        }
                    });
                    acc(&mut grads, *b, &gy.shape, |g| {
                        for (gi, y) in g.iter_mut().zip(&gy.data) {
                            *gi -= y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value.data;
                    let bv = &self.nodes[b.0].value.data;
                    acc(&mut grads, *a, &gy.shape, |g| {
                        for ((gi, y), bi) in g.iter_mut().zip(&gy.data).zip(bv) {
                            *gi += y * bi;
                        }
                    });
                    acc(&mut grads, *b, &gy.shape, |g| {
                        for ((gi, y), ai) in g.iter_mut().zip(&gy.data).zip(av) {
                            *gi += y * ai;
                        }
                    });
                }
                Op::Scale(x, s) => {
                    acc(&mut grads, *x, &gy.shape, |g| {
                        for (gi, y) in g.iter_mut().zip(&gy.data) {
                            *gi += y * s;
                        }
                    });
                }
                Op::Sum(x) => {
                    let shape = self.nodes[x.0].value.shape.clone();
                    let s = gy.data[0];
                    acc(&mut grads, *x, &shape, |g| {
                        for gi in g.iter_mut() {
                            *gi += s;
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let rows = gy.rows();
                    let total = gy.cols();
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.nodes[p.0].value.shape.clone();
                        let c = *shape.last().unwrap_or(&1);
                        acc(&mut grads, *p, &shape, |g| {
                            for r in 0..rows {
                                for (gi, y) in g[r * c..(r + 1) * c]
                                    .iter_mut()
                                    .zip(&gy.data[r * total + offset..r * total + offset + c])
                                {
                                    *gi += y;
                                }
                            }
                        });
                        offset += c;
                    }
                }
                Op::GatherRows(x, index) => {
                    let shape = self.nodes[x.0].value.shape.clone();
                    let c = gy.cols();
                    acc(&mut grads, *x, &shape, |g| {
                        for (r, &i) in index.iter().enumerate() {
                            for (gi, y) in g[i * c..(i + 1) * c].iter_mut().zip(&gy.data[r * c..(r + 1) * c]) {
                                *gi += y;
                            }
                        }
                    });
                }
                Op::ScatterSum(x, seg) => {
                    let shape = self.nodes[x.0].value.shape.clone();
                    let c = gy.cols();
                    acc(&mut grads, *x, &shape, |g| {
                        for d in 0..seg.n_out() {
                            let gd = &gy.data[d * c..(d + 1) * c];
                            for &s in seg.segment(d) {
                                for (gi, y) in g[s * c..(s + 1) * c].iter_mut().zip(gd) {
                                    *gi += y;
                                }
                            }
                        }
                    });
                }
                Op::Tri { kind, p, x } => {
                    let ps = &self.nodes[p.0].value;
                    let xs = &self.nodes[x.0].value;
                    let d = xs.cols();
                    let np = ps.cols();
                    let mut gp = vec![0.0; ps.len()];
                    let mut gx = vec![0.0; xs.len()];
                    for r in 0..xs.rows() {
                        kind.backward(
                            ps.row(r),
                            xs.row(r),
                            &gy.data[r * d..(r + 1) * d],
                            &mut gp[r * np..(r + 1) * np],
                            &mut gx[r * d..(r + 1) * d],
                        );
                    }
                    let (pshape, xshape) = (ps.shape.clone(), xs.shape.clone());
                    acc(&mut grads, *p, &pshape, |g| {
                        for (gi, y) in g.iter_mut().zip(&gp) {
                            *gi += y;
                        }
                    });
                    acc(&mut grads, *x, &xshape, |g| {
                        for (gi, y) in g.iter_mut().zip(&gx) {
                            *gi += y;
                        }
                    });
                }
            }
            grads[idx] = Some(gy);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            by_var: grads,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        let g = tape.backward(y, Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn second_backward_is_stale() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(2.0));
        let y = tape.tanh(x);
        tape.backward(y, Tensor::scalar(1.0)).unwrap();
        assert!(matches!(tape.backward(y, Tensor::scalar(1.0)), Err(Error::StaleTrace)));
    }

    #[test]
    fn upstream_shape_checked() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 2]));
        let y = tape.tanh(x);
        assert!(matches!(
            tape.backward(y, Tensor::zeros(&[4])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    fn finite_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn tri_ops_match_finite_differences() {
        let d = 4;
        for kind in [TriKind::Skew, TriKind::Lower, TriKind::LowerTransposed] {
            let np = kind.n_params(d);
            let p0: Vec<f64> = (0..np).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
            let x0: Vec<f64> = (0..d).map(|i| 0.3 * i as f64 - 0.4).collect();
            let w: Vec<f64> = (0..d).map(|i| 1.0 + i as f64).collect();
            let eval = |p: &[f64], x: &[f64]| {
                let mut y = vec![0.0; d];
                kind.apply(p, x, &mut y);
                y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut tape = Tape::new();
            let pv = tape.input(Tensor::new(vec![1, np], p0.clone()).unwrap());
            let xv = tape.input(Tensor::new(vec![1, d], x0.clone()).unwrap());
            let wv = tape.input(Tensor::new(vec![1, d], w.clone()).unwrap());
            let y = tape.tri(kind, pv, xv).unwrap();
            let yw = tape.mul(y, wv).unwrap();
            let s = tape.sum(yw);
            let g = tape.backward(s, Tensor::scalar(1.0)).unwrap();
            let fd_p = finite_difference(&|p| eval(p, &x0), &p0);
            let fd_x = finite_difference(&|x| eval(&p0, x), &x0);
            for (a, b) in g.wrt(pv).unwrap().data.iter().zip(&fd_p) {
                assert!((a - b).abs() < 1e-7, "{kind:?}: {a} vs {b}");
            }
            for (a, b) in g.wrt(xv).unwrap().data.iter().zip(&fd_x) {
                assert!((a - b).abs() < 1e-7, "{kind:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gather_scatter_adjoint() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let g = tape.gather_rows(x, Arc::new(vec![2, 0, 2])).unwrap();
        assert_eq!(tape.value(g).data, vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let seg = Arc::new(Segments {
            offsets: vec![0, 2, 3],
            sources: vec![0, 2, 1],
        });
        let s = tape.scatter_sum(g, seg).unwrap();
        assert_eq!(tape.value(s).data, vec![10.0, 12.0, 1.0, 2.0]);
        let total = tape.sum(s);
        let grads = tape.backward(total, Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data, vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
