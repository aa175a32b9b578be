use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EpochLoss;
use crate::error::{Error, Result};
use crate::generic::{residuals, step};
use crate::graph::{build_graph, GraphTopology, Normalization};
use crate::mesh::SolidMesh;
use crate::state::{LoadCase, StateField, StateVariable, Trajectory};
use crate::tignn::TignnModel;

pub const ERROR_CSV_HEADER: &str = "variable,split,lw,lq,med,uq,uw,n,excluded";
pub const LOSS_CSV_HEADER: &str = "epoch,data_term,degeneracy_term,total";

/// Norms below this make a snapshot's relative error meaningless.
const MIN_REFERENCE_NORM: f64 = 1e-12;

/// Autoregressive rollout: each prediction is fed back as the next input.
pub fn rollout(
    model: &TignnModel,
    mesh: &SolidMesh,
    initial: &StateField,
    load: &LoadCase,
    nt: usize,
    dt: f64,
    stats: &Normalization,
) -> Result<Trajectory> {
    if initial.len() != mesh.n_nodes() {
        return Err(Error::ShapeMismatch {
            expected: vec![mesh.n_nodes()],
            actual: vec![initial.len()],
        });
    }
    let topo = GraphTopology::from_mesh(mesh);
    let mut snapshots = Vec::with_capacity(nt + 1);
    snapshots.push(initial.clone());
    for t in 0..nt {
        let z = &snapshots[t];
        let g = build_graph(&topo, z, &load.nodal_forces(mesh.n_nodes(), t), stats)?;
        let out = model.forward(&g)?;
        if !out.all_finite() {
            return Err(Error::RolloutDivergence { step: t });
        }
        let next = step(z, &out, dt, stats, mesh, t)?;
        snapshots.push(next);
    }
    Ok(Trajectory {
        load: load.clone(),
        dt,
        snapshots,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableErrors {
    pub variable: StateVariable,
    /// Relative L2 error per kept snapshot.
    pub errors: Vec<f64>,
    /// Snapshots skipped because the reference field was (numerically) zero.
    pub excluded: usize,
}

/// Per-variable relative errors, in `q, v, sigma` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub variables: Vec<VariableErrors>,
}

impl Default for ErrorReport {
    fn default() -> Self {
        ErrorReport {
            variables: StateVariable::ALL
                .iter()
                .map(|&variable| VariableErrors {
                    variable,
                    errors: Vec::new(),
                    excluded: 0,
                })
                .collect(),
        }
    }
}

impl ErrorReport {
    pub fn get(&self, var: StateVariable) -> &VariableErrors {
        self.variables
            .iter()
            .find(|v| v.variable == var)
            .expect("report holds every state variable")
    }

    pub fn merge(&mut self, other: &ErrorReport) {
        for v in &mut self.variables {
            let o = other.get(v.variable);
            v.errors.extend_from_slice(&o.errors);
            v.excluded += o.excluded;
        }
    }

    pub fn summary(&self, var: StateVariable) -> Result<BoxStats> {
        boxplot_stats(&self.get(var).errors)
    }
}

/// Relative L2 error per snapshot `t >= 1` and per state variable.
pub fn evaluate(predicted: &Trajectory, truth: &Trajectory) -> Result<ErrorReport> {
    if predicted.snapshots.len() != truth.snapshots.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![truth.snapshots.len()],
            actual: vec![predicted.snapshots.len()],
        });
    }
    if (predicted.dt - truth.dt).abs() > 1e-12 * truth.dt.abs() {
        return Err(Error::invalid(format!(
            "trajectories use different dt ({} vs {})",
            predicted.dt, truth.dt
        )));
    }
    let mut report = ErrorReport::default();
    for (p, t) in predicted.snapshots.iter().zip(&truth.snapshots).skip(1) {
        if p.len() != t.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![t.len()],
                actual: vec![p.len()],
            });
        }
        for v in &mut report.variables {
            let (xp, xt) = (p.flatten(v.variable), t.flatten(v.variable));
            let reference = xt.iter().map(|x| x * x).sum::<f64>().sqrt();
            if reference < MIN_REFERENCE_NORM {
                v.excluded += 1;
                continue;
            }
            let diff = xp.iter().zip(&xt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v.errors.push(diff / reference);
        }
    }
    Ok(report)
}

/// Root mean square of `|L dS|^2 + |M dE|^2` over every node of every input
/// snapshot (teacher forced: ground-truth states as inputs).
pub fn degeneracy_rms(
    model: &TignnModel,
    mesh: &SolidMesh,
    trajectories: &[&Trajectory],
    stats: &Normalization,
) -> Result<f64> {
    let topo = GraphTopology::from_mesh(mesh);
    let (mut sum, mut count) = (0.0, 0usize);
    for traj in trajectories {
        for t in 0..traj.steps() {
            let g = build_graph(&topo, &traj.snapshots[t], &traj.load.nodal_forces(mesh.n_nodes(), t), stats)?;
            let out = model.forward(&g)?;
            for (a, b) in residuals(&out) {
                sum += a * a + b * b;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("no snapshot pairs to evaluate"));
    }
    Ok((sum / count as f64).sqrt())
}

/// Box-plot summary with inclusive linear-interpolation quartiles and
/// whiskers at the extreme samples within 1.5 IQR of the box, never inside it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub lw: f64,
    pub lq: f64,
    pub med: f64,
    pub uq: f64,
    pub uw: f64,
}

pub fn boxplot_stats(errors: &[f64]) -> Result<BoxStats> {
    if errors.is_empty() {
        return Err(Error::invalid("box-plot statistics need at least one value"));
    }
    if errors.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("box-plot statistics are undefined for NaN"));
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        if lo == hi {
            s[lo]
        } else {
            s[lo] + frac * (s[hi] - s[lo])
        }
    };
    let (lq, med, uq) = (quantile(0.25), quantile(0.5), quantile(0.75));
    let iqr = uq - lq;
    let (lo_fence, hi_fence) = (lq - 1.5 * iqr, uq + 1.5 * iqr);
    // With no sample between a quartile and its fence the whisker collapses onto the box.
    let lw = s.iter().copied().find(|&x| x >= lo_fence).map_or(lq, |x| x.min(lq));
    let uw = s.iter().rev().copied().find(|&x| x <= hi_fence).map_or(uq, |x| x.max(uq));
    Ok(BoxStats { lw, lq, med, uq, uw })
}

/// Error CSV, one row per (variable, split). Variables without any kept
/// snapshot get `NaN` statistics.
pub fn error_csv(splits: &[(&str, &ErrorReport)]) -> String {
    let mut out = String::new();
    out.push_str(ERROR_CSV_HEADER);
    out.push('\n');
    for (split, report) in splits {
        for v in &report.variables {
            let b = boxplot_stats(&v.errors).unwrap_or(BoxStats {
                lw: f64::NAN,
                lq: f64::NAN,
                med: f64::NAN,
                uq: f64::NAN,
                uw: f64::NAN,
            });
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                v.variable.name(),
                split,
                b.lw,
                b.lq,
                b.med,
                b.uq,
                b.uw,
                v.errors.len(),
                v.excluded
            );
        }
    }
    out
}

pub fn loss_csv(history: &[EpochLoss]) -> String {
    let mut out = String::new();
    out.push_str(LOSS_CSV_HEADER);
    out.push('\n');
    for h in history {
        let _ = writeln!(out, "{},{},{},{}", h.epoch, h.data, h.degeneracy, h.total);
    }
    out
}
