//! GENERIC operators `L` (skew) and `M = A A^T` (PSD) and the explicit update.

use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::graph::Normalization;
use crate::mesh::SolidMesh;
use crate::nn::TriKind;
use crate::state::{NodeState, StateField, STATE_DIM};
use crate::tignn::{GenericOutputs, L_PARAMS, M_PARAMS};

pub type Mat12 = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type Vec12 = [f64; STATE_DIM];

fn check_len(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::ShapeMismatch {
            expected: vec![n],
            actual: vec![p.len()],
        });
    }
    Ok(())
}

/// `L = T - T^T` with `T` strictly lower triangular, filled row-major.
pub fn assemble_l(p: &[f64]) -> Result<Mat12> {
    check_len(p, L_PARAMS)?;
    let mut l = Mat12::zeros();
    for i in 1..STATE_DIM {
        for j in 0..i {
            let t = p[TriKind::Skew.index(i, j)];
            l[(i, j)] = t;
            l[(j, i)] = -t;
        }
    }
    Ok(l)
}

/// Lower-triangular factor `A`, filled row-major including the diagonal.
pub fn assemble_a(p: &[f64]) -> Result<Mat12> {
    check_len(p, M_PARAMS)?;
    let mut a = Mat12::zeros();
    for i in 0..STATE_DIM {
        for j in 0..=i {
            a[(i, j)] = p[TriKind::Lower.index(i, j)];
        }
    }
    Ok(a)
}

/// `M = A A^T`; each off-diagonal pair is computed once and mirrored.
pub fn assemble_m(p: &[f64]) -> Result<Mat12> {
    let a = assemble_a(p)?;
    let mut m = Mat12::zeros();
    for i in 0..STATE_DIM {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..=j {
                s += a[(i, k)] * a[(j, k)];
            }
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    Ok(m)
}

fn matvec(m: &Mat12, x: &Vec12) -> Vec12 {
    std::array::from_fn(|i| (0..STATE_DIM).map(|j| m[(i, j)] * x[j]).sum())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `L dE + M dS` for one node.
pub fn generic_rate(l: &Mat12, m: &Mat12, de: &Vec12, ds: &Vec12) -> Vec12 {
    let a = matvec(l, de);
    let b = matvec(m, ds);
    std::array::from_fn(|i| a[i] + b[i])
}

/// `(|L dS|, |M dE|)`.
pub fn degeneracy_residual(l: &Mat12, m: &Mat12, de: &Vec12, ds: &Vec12) -> (f64, f64) {
    (norm(&matvec(l, ds)), norm(&matvec(m, de)))
}

/// Per-node rates in normalized units, computed directly from the packed
/// parameters with the same arithmetic as the traced loss.
pub fn rates(out: &GenericOutputs) -> Vec<Vec12> {
    let n = out.n_vertices();
    let mut rates = Vec::with_capacity(n);
    let (mut y, mut t, mut w) = ([0.0; STATE_DIM], [0.0; STATE_DIM], [0.0; STATE_DIM]);
    for r in 0..n {
        let (l, m) = (out.l_params.row(r), out.m_params.row(r));
        TriKind::Skew.apply(l, out.de.row(r), &mut y);
        TriKind::LowerTransposed.apply(m, out.ds.row(r), &mut t);
        TriKind::Lower.apply(m, &t, &mut w);
        rates.push(std::array::from_fn(|i| y[i] + w[i]));
    }
    rates
}

/// Per-node degeneracy residual norms `(|L dS|, |M dE|)` from packed parameters.
pub fn residuals(out: &GenericOutputs) -> Vec<(f64, f64)> {
    let (mut y, mut t, mut w) = ([0.0; STATE_DIM], [0.0; STATE_DIM], [0.0; STATE_DIM]);
    (0..out.n_vertices())
        .map(|r| {
            let (l, m) = (out.l_params.row(r), out.m_params.row(r));
            TriKind::Skew.apply(l, out.ds.row(r), &mut y);
            TriKind::LowerTransposed.apply(m, out.de.row(r), &mut t);
            TriKind::Lower.apply(m, &t, &mut w);
            (norm(&y), norm(&w))
        })
        .collect()
}

/// Forward Euler in physical units: `z + dt * denorm(rate)`, then Dirichlet
/// nodes are reset to their rest position with zero velocity.
pub fn step(
    z: &StateField,
    out: &GenericOutputs,
    dt: f64,
    stats: &Normalization,
    mesh: &SolidMesh,
    step_index: usize,
) -> Result<StateField> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if z.len() != mesh.n_nodes() || out.n_vertices() != z.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![mesh.n_nodes()],
            actual: vec![z.len(), out.n_vertices()],
        });
    }
    let mut next = Vec::with_capacity(z.len());
    for (i, mut r) in rates(out).into_iter().enumerate() {
        stats.target.denormalize(&mut r);
        let cur = z.nodes[i].to_array();
        let zi: Vec12 = std::array::from_fn(|c| cur[c] + dt * r[c]);
        let mut node = NodeState::from_array(&zi);
        if !node.is_finite() {
            return Err(Error::RolloutDivergence { step: step_index });
        }
        if mesh.is_fixed(i) {
            node.q = mesh.rest_positions[i];
            node.v = [0.0; 3];
        }
        next.push(node);
    }
    Ok(StateField {
        nodes: next,
        time: z.time + dt,
    })
}
