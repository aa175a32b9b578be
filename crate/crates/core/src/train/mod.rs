//! One-step rate fitting with a degeneracy penalty, plus rollout evaluation.

mod eval;

pub use eval::{
    boxplot_stats, degeneracy_rms, error_csv, evaluate, loss_csv, rollout, BoxStats, ErrorReport, VariableErrors,
    ERROR_CSV_HEADER, LOSS_CSV_HEADER,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generic::{rates, residuals};
use crate::graph::{build_graph, finite_difference_rate, GraphTopology, Normalization, SimGraph};
use crate::mesh::SolidMesh;
use crate::nn::{Adam, AdamConfig, Tape, Tensor, Var};
use crate::state::{StateField, Trajectory, STATE_DIM};
use crate::tignn::{trace_degeneracy, trace_rate, GenericOutputs, ModelConfig, TignnModel, TracedOutputs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Snapshot pairs per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the degeneracy penalty.
    pub lambda_d: f64,
    /// Input noise, as a fraction of each channel's spread.
    pub noise: f64,
    pub seed: u64,
    pub k: usize,
    pub hidden: usize,
    pub dt: f64,
    /// Train fraction of the load cases.
    pub split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 8,
            lr: 1e-3,
            lambda_d: 1e-2,
            noise: 1e-3,
            seed: 0,
            k: 6,
            hidden: 64,
            dt: 5e-2,
            split: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            k: self.k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if !(self.lambda_d >= 0.0 && self.lambda_d.is_finite()) {
            return Err(Error::invalid(format!("lambda_d must be non-negative, got {}", self.lambda_d)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::invalid(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        Ok(())
    }
}

/// Loss split into its two terms; `total = data + lambda_d * degeneracy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub data: f64,
    pub degeneracy: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub data: f64,
    pub degeneracy: f64,
    pub total: f64,
}

/// Normalized finite-difference target for one snapshot pair, flattened `n x 12`.
pub fn normalized_target(z_t: &StateField, z_next: &StateField, dt: f64, stats: &Normalization) -> Vec<f64> {
    let mut target = finite_difference_rate(z_t, z_next, dt);
    for row in target.chunks_mut(STATE_DIM) {
        stats.target.normalize(row);
    }
    target
}

/// Untraced loss of decoder outputs against one snapshot pair.
pub fn loss(
    outputs: &GenericOutputs,
    z_t: &StateField,
    z_next: &StateField,
    dt: f64,
    lambda_d: f64,
    stats: &Normalization,
) -> Result<LossTerms> {
    let n = outputs.n_vertices();
    if z_t.len() != n || z_next.len() != n {
        return Err(Error::ShapeMismatch {
            expected: vec![n],
            actual: vec![z_t.len(), z_next.len()],
        });
    }
    let target = normalized_target(z_t, z_next, dt, stats);
    let mut sq = 0.0;
    for (r, t) in rates(outputs).iter().zip(target.chunks(STATE_DIM)) {
        sq += r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let data = sq / (n * STATE_DIM).max(1) as f64;
    let degeneracy = residuals(outputs).iter().map(|(a, b)| a * a + b * b).sum::<f64>() / n.max(1) as f64;
    Ok(LossTerms {
        data,
        degeneracy,
        total: data + lambda_d * degeneracy,
    })
}

/// Tape handles of the traced loss terms.
#[derive(Clone, Copy, Debug)]
pub struct TracedLoss {
    pub data: Var,
    pub degeneracy: Var,
    pub total: Var,
}

/// Records the loss for traced outputs against a normalized target of the same shape.
pub fn trace_loss(tape: &mut Tape, outputs: &TracedOutputs, target: Tensor, lambda_d: f64) -> Result<TracedLoss> {
    let n = tape.value(outputs.de).rows().max(1) as f64;
    let target = tape.input(target);
    let rate = trace_rate(tape, outputs)?;
    let diff = tape.sub(rate, target)?;
    let sq = tape.mul(diff, diff)?;
    let data = tape.mean(sq);
    let (l_ds, m_de) = trace_degeneracy(tape, outputs)?;
    let a = tape.mul(l_ds, l_ds)?;
    let b = tape.mul(m_de, m_de)?;
    let a = tape.sum(a);
    let b = tape.sum(b);
    let deg = tape.add(a, b)?;
    let degeneracy = tape.scale(deg, 1.0 / n);
    let weighted = tape.scale(degeneracy, lambda_d);
    let total = tape.add(data, weighted)?;
    Ok(TracedLoss { data, degeneracy, total })
}

/// Loss and parameter gradients (in `params()` order) over a batch graph.
pub fn loss_and_gradients(
    model: &TignnModel,
    graph: &SimGraph,
    target: Tensor,
    lambda_d: f64,
) -> Result<(LossTerms, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let outputs = model.trace(&mut tape, graph)?;
    let l = trace_loss(&mut tape, &outputs, target, lambda_d)?;
    let terms = LossTerms {
        data: tape.value(l.data).item(),
        degeneracy: tape.value(l.degeneracy).item(),
        total: tape.value(l.total).item(),
    };
    let grads = tape.backward(l.total, Tensor::scalar(1.0))?;
    let mut out: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(&p.shape)).collect();
    grads.accumulate_params(&mut out);
    Ok((terms, out))
}

/// Snapshot state with Gaussian noise of `gamma` times each channel's spread.
/// Positions take the spread of the relative-position edge channels; fixed
/// nodes keep their position and velocity.
fn perturb<R: rand::Rng>(z: &StateField, mesh: &SolidMesh, stats: &Normalization, gamma: f64, rng: &mut R) -> StateField {
    let mut out = z.clone();
    for (i, node) in out.nodes.iter_mut().enumerate() {
        let fixed = mesh.is_fixed(i);
        for a in 0..3 {
            let e1: f64 = StandardNormal.sample(rng);
            let e2: f64 = StandardNormal.sample(rng);
            if !fixed {
                node.q[a] += gamma * stats.edge.std[a] * e1;
                node.v[a] += gamma * stats.node.std[a] * e2;
            }
        }
        for c in 0..6 {
            let e: f64 = StandardNormal.sample(rng);
            node.sigma[c] += gamma * stats.node.std[3 + c] * e;
        }
    }
    out
}

struct Pair<'a> {
    traj: &'a Trajectory,
    t: usize,
    target: Vec<f64>,
    clean: Option<SimGraph>,
}

/// Trains in place. `progress` sees every epoch's mean loss and may return
/// `false` to stop early; the history up to that point is returned.
pub fn train(
    model: &mut TignnModel,
    mesh: &SolidMesh,
    trajectories: &[&Trajectory],
    stats: &Normalization,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochLoss) -> bool,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    model.validate()?;
    stats.validate()?;
    let topo = GraphTopology::from_mesh(mesh);
    let mut pairs = Vec::new();
    for traj in trajectories {
        if (traj.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
            return Err(Error::invalid(format!(
                "trajectory dt {} differs from the configured dt {}",
                traj.dt, cfg.dt
            )));
        }
        for t in 0..traj.steps() {
            let (a, b) = (&traj.snapshots[t], &traj.snapshots[t + 1]);
            if a.len() != mesh.n_nodes() || b.len() != mesh.n_nodes() {
                return Err(Error::ShapeMismatch {
                    expected: vec![mesh.n_nodes()],
                    actual: vec![a.len(), b.len()],
                });
            }
            let clean = if cfg.noise == 0.0 {
                Some(build_graph(&topo, a, &traj.load.nodal_forces(mesh.n_nodes(), t), stats)?)
            } else {
                None
            };
            pairs.push(Pair {
                traj,
                t,
                target: normalized_target(a, b, traj.dt, stats),
                clean,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid("training needs at least one snapshot pair"));
    }

    let names = model.param_names();
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &sizes,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut data, mut deg, mut total) = (0.0, 0.0, 0.0);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut noisy = Vec::new();
            if cfg.noise > 0.0 {
                for &p in batch {
                    let pair = &pairs[p];
                    let z = perturb(&pair.traj.snapshots[pair.t], mesh, stats, cfg.noise, &mut rng);
                    let forces = pair.traj.load.nodal_forces(mesh.n_nodes(), pair.t);
                    noisy.push(build_graph(&topo, &z, &forces, stats)?);
                }
            }
            let graphs: Vec<&SimGraph> = if cfg.noise > 0.0 {
                noisy.iter().collect()
            } else {
                batch.iter().map(|&p| pairs[p].clean.as_ref().expect("clean graph cached")).collect()
            };
            let graph = SimGraph::union(&graphs);
            let mut target = Vec::with_capacity(graph.n_vertices * STATE_DIM);
            for &p in batch {
                target.extend_from_slice(&pairs[p].target);
            }
            let target = Tensor {
                shape: vec![graph.n_vertices, STATE_DIM],
                data: target,
            };
            let (terms, grads) = loss_and_gradients(model, &graph, target, cfg.lambda_d)?;
            if !terms.total.is_finite() {
                return Err(Error::TrainingDivergence {
                    epoch,
                    step,
                    what: "non-finite loss".into(),
                });
            }
            let mut params = model.params_mut();
            adam.update(&mut params, &grads, &names).map_err(|e| Error::TrainingDivergence {
                epoch,
                step,
                what: e.to_string(),
            })?;
            let w = batch.len() as f64;
            data += w * terms.data;
            deg += w * terms.degeneracy;
            total += w * terms.total;
        }
        let n = pairs.len() as f64;
        let row = EpochLoss {
            epoch,
            data: data / n,
            degeneracy: deg / n,
            total: total / n,
        };
        history.push(row);
        if !progress(&row) {
            break;
        }
    }
    Ok(history)
}
