//! Per-node state `z = (q, v, sigma)` and the load cases that drive it.
//!
//! Stress is stored in Voigt order `(xx, yy, zz, xy, yz, xz)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the per-node state vector: 3 position, 3 velocity, 6 stress.
pub const STATE_DIM: usize = 12;

/// Voigt index pairs, in storage order.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub q: [f64; 3],
    pub v: [f64; 3],
    pub sigma: [f64; 6],
}

impl NodeState {
    pub fn at_rest(q: [f64; 3]) -> Self {
        NodeState {
            q,
            v: [0.0; 3],
            sigma: [0.0; 6],
        }
    }

    /// Flat `[q, v, sigma]` layout used by the learned integrator.
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut z = [0.0; STATE_DIM];
        z[0..3].copy_from_slice(&self.q);
        z[3..6].copy_from_slice(&self.v);
        z[6..12].copy_from_slice(&self.sigma);
        z
    }

    pub fn from_array(z: &[f64; STATE_DIM]) -> Self {
        let mut s = NodeState::default();
        s.q.copy_from_slice(&z[0..3]);
        s.v.copy_from_slice(&z[3..6]);
        s.sigma.copy_from_slice(&z[6..12]);
        s
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    pub nodes: Vec<NodeState>,
    pub time: f64,
}

impl StateField {
    pub fn rest(positions: &[[f64; 3]]) -> Self {
        StateField {
            nodes: positions.iter().map(|&q| NodeState::at_rest(q)).collect(),
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.nodes.iter().map(|n| n.q).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && self.nodes.iter().all(NodeState::is_finite)
    }

    /// Flattened values of one state variable, node-major.
    pub fn flatten(&self, var: StateVariable) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * var.width());
        for n in &self.nodes {
            match var {
                StateVariable::Position => out.extend_from_slice(&n.q),
                StateVariable::Velocity => out.extend_from_slice(&n.v),
                StateVariable::Stress => out.extend_from_slice(&n.sigma),
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateVariable {
    #[serde(rename = "q")]
    Position,
    #[serde(rename = "v")]
    Velocity,
    #[serde(rename = "sigma")]
    Stress,
}

impl StateVariable {
    pub const ALL: [StateVariable; 3] = [
        StateVariable::Position,
        StateVariable::Velocity,
        StateVariable::Stress,
    ];

    pub fn width(self) -> usize {
        match self {
            StateVariable::Position | StateVariable::Velocity => 3,
            StateVariable::Stress => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StateVariable::Position => "q",
            StateVariable::Velocity => "v",
            StateVariable::Stress => "sigma",
        }
    }
}

/// Constant nodal load applied to a set of nodes over a half-open step window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadCase {
    pub loaded_nodes: Vec<usize>,
    pub force_per_node: [f64; 3],
    /// Steps `start..end`; the load acts on the transition from snapshot `t` to `t + 1`.
    pub active_steps: (usize, usize),
}

impl LoadCase {
    pub fn new(mut loaded_nodes: Vec<usize>, force_per_node: [f64; 3], active_steps: (usize, usize)) -> Self {
        loaded_nodes.sort_unstable();
        loaded_nodes.dedup();
        LoadCase {
            loaded_nodes,
            force_per_node,
            active_steps,
        }
    }

    pub fn unloaded() -> Self {
        LoadCase {
            loaded_nodes: Vec::new(),
            force_per_node: [0.0; 3],
            active_steps: (0, 0),
        }
    }

    pub fn is_active(&self, step: usize) -> bool {
        step >= self.active_steps.0 && step < self.active_steps.1
    }

    pub fn is_loaded(&self, node: usize) -> bool {
        self.loaded_nodes.binary_search(&node).is_ok()
    }

    /// Per-node external force at `step`.
    pub fn nodal_forces(&self, n_nodes: usize, step: usize) -> Vec<[f64; 3]> {
        let mut f = vec![[0.0; 3]; n_nodes];
        if self.is_active(step) {
            for &i in &self.loaded_nodes {
                f[i] = self.force_per_node;
            }
        }
        f
    }

    pub fn validate(&self, n_nodes: usize, fixed: &[usize]) -> Result<()> {
        if !self.force_per_node.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("load force must be finite"));
        }
        for &i in &self.loaded_nodes {
            if i >= n_nodes {
                return Err(Error::invalid(format!(
                    "loaded node {i} out of range for {n_nodes} nodes"
                )));
            }
            if fixed.binary_search(&i).is_ok() {
                return Err(Error::invalid(format!(
                    "loaded node {i} is also a fixed node"
                )));
            }
        }
        Ok(())
    }
}

/// A load case and its `nt + 1` snapshots at uniform spacing `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub load: LoadCase,
    pub dt: f64,
    pub snapshots: Vec<StateField>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.snapshots.len().saturating_sub(1)
    }
}
