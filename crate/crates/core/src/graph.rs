//! Graph view of a solid: normalized node/edge features over mesh-edge topology.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::SolidMesh;
use crate::nn::{Segments, Tensor};
use crate::state::{LoadCase, StateField, Trajectory, STATE_DIM};

/// Velocity 3, stress 6, node kind one-hot 3, external force 3.
pub const NODE_FEATURES: usize = 15;
/// Relative position `q_src - q_dst` and its length.
pub const EDGE_FEATURES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Free,
    Fixed,
    Loaded,
}

impl NodeKind {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            NodeKind::Free => [1.0, 0.0, 0.0],
            NodeKind::Fixed => [0.0, 1.0, 0.0],
            NodeKind::Loaded => [0.0, 0.0, 1.0],
        }
    }
}

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(width: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Population mean and std per channel; channels listed in `centered` keep
    /// mean 0 and use the root mean square. Zero spread is replaced by 1.
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, width: usize, centered: &[usize]) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        for r in rows.clone() {
            if r.len() != width {
                return Err(Error::ShapeMismatch {
                    expected: vec![width],
                    actual: vec![r.len()],
                });
            }
            n += 1;
            for (s, x) in sum.iter_mut().zip(r) {
                *s += x;
            }
        }
        if n == 0 {
            return Err(Error::invalid("normalization statistics need at least one sample"));
        }
        let mut mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for &c in centered {
            mean[c] = 0.0;
        }
        let mut sq = vec![0.0; width];
        for r in rows {
            for ((s, x), m) in sq.iter_mut().zip(r).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn normalize(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }

    pub fn denormalize(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = *x * s + m;
        }
    }

    fn validate(&self, width: usize, what: &str) -> Result<()> {
        if self.mean.len() != width || self.std.len() != width {
            return Err(Error::invalid(format!(
                "{what} statistics have width {}/{}, expected {width}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("{what} statistics must be finite with positive spread")));
        }
        Ok(())
    }
}

/// Frozen feature and target statistics. Relative-position edge channels and all
/// target channels are centered at zero so that edge antisymmetry is exact and a
/// zero predicted rate stays zero after denormalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub node: ChannelStats,
    pub edge: ChannelStats,
    pub target: ChannelStats,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            node: ChannelStats::identity(NODE_FEATURES),
            edge: ChannelStats::identity(EDGE_FEATURES),
            target: ChannelStats::identity(STATE_DIM),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.node.validate(NODE_FEATURES, "node")?;
        self.edge.validate(EDGE_FEATURES, "edge")?;
        self.target.validate(STATE_DIM, "target")?;
        if self.edge.mean[..3].iter().any(|&m| m != 0.0) || self.target.mean.iter().any(|&m| m != 0.0) {
            return Err(Error::invalid("relative-position and target statistics must be zero-mean"));
        }
        Ok(())
    }
}

/// Directed edge list over shared element edges, sorted by `(dst, src)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTopology {
    pub n_vertices: usize,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    /// Offsets of each destination's incoming range in `src`/`dst`.
    pub dst_offsets: Vec<usize>,
    pub fixed: Vec<bool>,
}

impl GraphTopology {
    pub fn from_mesh(mesh: &SolidMesh) -> Self {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (a, b) in mesh.undirected_edges() {
            pairs.push((b, a));
            pairs.push((a, b));
        }
        // (dst, src) order
        pairs.sort_unstable_by_key(|&(s, d)| (d, s));
        let n = mesh.n_nodes();
        let mut dst_offsets = vec![0usize; n + 1];
        for &(_, d) in &pairs {
            dst_offsets[d + 1] += 1;
        }
        for i in 0..n {
            dst_offsets[i + 1] += dst_offsets[i];
        }
        let fixed = (0..n).map(|i| mesh.is_fixed(i)).collect();
        GraphTopology {
            n_vertices: n,
            src: Arc::new(pairs.iter().map(|p| p.0).collect()),
            dst: Arc::new(pairs.iter().map(|p| p.1).collect()),
            dst_offsets,
            fixed,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}

/// Network input for one solid (or a disjoint union of several).
#[derive(Clone, Debug, PartialEq)]
pub struct SimGraph {
    pub n_vertices: usize,
    /// `n_vertices x NODE_FEATURES`, normalized.
    pub node_features: Tensor,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    /// `n_edges x EDGE_FEATURES`, normalized.
    pub edge_features: Tensor,
    /// Incoming edges per vertex in summation order.
    pub incoming: Arc<Segments>,
}

impl SimGraph {
    /// Validates the parts and fixes the per-vertex summation order of incoming edges.
    pub fn new(node_features: Tensor, src: Arc<Vec<usize>>, dst: Arc<Vec<usize>>, edge_features: Tensor) -> Result<Self> {
        let n = node_features.rows();
        let ne = src.len();
        if node_features.cols() != NODE_FEATURES || node_features.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                expected: vec![n, NODE_FEATURES],
                actual: node_features.shape.clone(),
            });
        }
        if dst.len() != ne || edge_features.shape != [ne, EDGE_FEATURES] {
            return Err(Error::ShapeMismatch {
                expected: vec![ne, EDGE_FEATURES],
                actual: edge_features.shape.clone(),
            });
        }
        if let Some(k) = (0..ne).find(|&k| src[k] >= n || dst[k] >= n) {
            return Err(Error::invalid(format!("edge {k} references a vertex outside 0..{n}")));
        }
        let mut offsets = vec![0usize; n + 1];
        for &d in dst.iter() {
            offsets[d + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut sources = vec![0usize; ne];
        for (k, &d) in dst.iter().enumerate() {
            sources[fill[d]] = k;
            fill[d] += 1;
        }
        // Each vertex sums its incoming messages in an order fixed by edge content,
        // not by vertex ids, so relabelling the mesh cannot change any rounding.
        let (node, edge) = (&node_features.data, &edge_features.data);
        for d in 0..n {
            sources[offsets[d]..offsets[d + 1]].sort_by(|&a, &b| {
                cmp_rows(
                    &edge[a * EDGE_FEATURES..(a + 1) * EDGE_FEATURES],
                    &edge[b * EDGE_FEATURES..(b + 1) * EDGE_FEATURES],
                )
                .then_with(|| {
                    cmp_rows(
                        &node[src[a] * NODE_FEATURES..(src[a] + 1) * NODE_FEATURES],
                        &node[src[b] * NODE_FEATURES..(src[b] + 1) * NODE_FEATURES],
                    )
                })
                .then(src[a].cmp(&src[b]))
            });
        }
        Ok(SimGraph {
            n_vertices: n,
            node_features,
            src,
            dst,
            edge_features,
            incoming: Arc::new(Segments { offsets, sources }),
        })
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    /// Directed edges as `(src, dst)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }

    /// Disjoint union; vertex ids of graph `k` are offset by the vertex counts before it.
    pub fn union(graphs: &[&SimGraph]) -> SimGraph {
        let n_vertices: usize = graphs.iter().map(|g| g.n_vertices).sum();
        let n_edges: usize = graphs.iter().map(|g| g.n_edges()).sum();
        let mut node = Vec::with_capacity(n_vertices * NODE_FEATURES);
        let mut edge = Vec::with_capacity(n_edges * EDGE_FEATURES);
        let mut src = Vec::with_capacity(n_edges);
        let mut dst = Vec::with_capacity(n_edges);
        let mut offsets = Vec::with_capacity(n_vertices + 1);
        let mut sources = Vec::with_capacity(n_edges);
        offsets.push(0);
        let (mut v0, mut e0) = (0, 0);
        for g in graphs {
            node.extend_from_slice(&g.node_features.data);
            edge.extend_from_slice(&g.edge_features.data);
            src.extend(g.src.iter().map(|s| s + v0));
            dst.extend(g.dst.iter().map(|d| d + v0));
            for d in 0..g.n_vertices {
                sources.extend(g.incoming.segment(d).iter().map(|e| e + e0));
                offsets.push(sources.len());
            }
            v0 += g.n_vertices;
            e0 += g.n_edges();
        }
        SimGraph {
            n_vertices,
            node_features: Tensor {
                shape: vec![n_vertices, NODE_FEATURES],
                data: node,
            },
            src: Arc::new(src),
            dst: Arc::new(dst),
            edge_features: Tensor {
                shape: vec![n_edges, EDGE_FEATURES],
                data: edge,
            },
            incoming: Arc::new(Segments { offsets, sources }),
        }
    }
}

fn raw_node_features(fixed: bool, node: &crate::state::NodeState, force: [f64; 3]) -> [f64; NODE_FEATURES] {
    let kind = if fixed {
        NodeKind::Fixed
    } else if force != [0.0; 3] {
        NodeKind::Loaded
    } else {
        NodeKind::Free
    };
    let mut x = [0.0; NODE_FEATURES];
    x[0..3].copy_from_slice(&node.v);
    x[3..9].copy_from_slice(&node.sigma);
    x[9..12].copy_from_slice(&kind.one_hot());
    x[12..15].copy_from_slice(&force);
    x
}

fn raw_edge_features(q: &[crate::state::NodeState], s: usize, d: usize) -> [f64; EDGE_FEATURES] {
    let (a, b) = (q[s].q, q[d].q);
    let r = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    [r[0], r[1], r[2], (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()]
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Builds the graph for arbitrary per-node external forces. A free node with a
/// nonzero force is tagged `Loaded`.
pub fn build_graph(
    topo: &GraphTopology,
    state: &StateField,
    forces: &[[f64; 3]],
    stats: &Normalization,
) -> Result<SimGraph> {
    let n = topo.n_vertices;
    if state.len() != n || forces.len() != n {
        return Err(Error::ShapeMismatch {
            expected: vec![n],
            actual: vec![state.len(), forces.len()],
        });
    }
    let mut node = Vec::with_capacity(n * NODE_FEATURES);
    for i in 0..n {
        let mut x = raw_node_features(topo.fixed[i], &state.nodes[i], forces[i]);
        stats.node.normalize(&mut x);
        node.extend_from_slice(&x);
    }
    let ne = topo.n_edges();
    let mut edge = Vec::with_capacity(ne * EDGE_FEATURES);
    for k in 0..ne {
        let mut x = raw_edge_features(&state.nodes, topo.src[k], topo.dst[k]);
        stats.edge.normalize(&mut x);
        edge.extend_from_slice(&x);
    }
    SimGraph::new(
        Tensor {
            shape: vec![n, NODE_FEATURES],
            data: node,
        },
        topo.src.clone(),
        topo.dst.clone(),
        Tensor {
            shape: vec![ne, EDGE_FEATURES],
            data: edge,
        },
    )
}

/// Graph for snapshot `step` of a load case.
pub fn mesh_to_graph(
    mesh: &SolidMesh,
    state: &StateField,
    load: &LoadCase,
    step: usize,
    stats: &Normalization,
) -> Result<SimGraph> {
    let topo = GraphTopology::from_mesh(mesh);
    build_graph(&topo, state, &load.nodal_forces(mesh.n_nodes(), step), stats)
}

/// Finite-difference rate `(z_{t+1} - z_t) / dt` per node, flattened `n x 12`.
pub fn finite_difference_rate(a: &StateField, b: &StateField, dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * STATE_DIM);
    for (x, y) in a.nodes.iter().zip(&b.nodes) {
        let (x, y) = (x.to_array(), y.to_array());
        out.extend(x.iter().zip(&y).map(|(p, q)| (q - p) / dt));
    }
    out
}

/// Statistics over every snapshot pair `(t, t + 1)` of the given trajectories.
pub fn normalization_stats(mesh: &SolidMesh, trajectories: &[&Trajectory]) -> Result<Normalization> {
    let topo = GraphTopology::from_mesh(mesh);
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut targets = Vec::new();
    for traj in trajectories {
        for t in 0..traj.steps() {
            let s = &traj.snapshots[t];
            if s.len() != mesh.n_nodes() {
                return Err(Error::ShapeMismatch {
                    expected: vec![mesh.n_nodes()],
                    actual: vec![s.len()],
                });
            }
            let forces = traj.load.nodal_forces(mesh.n_nodes(), t);
            for i in 0..mesh.n_nodes() {
                nodes.extend_from_slice(&raw_node_features(topo.fixed[i], &s.nodes[i], forces[i]));
            }
            for k in 0..topo.n_edges() {
                edges.extend_from_slice(&raw_edge_features(&s.nodes, topo.src[k], topo.dst[k]));
            }
            targets.extend(finite_difference_rate(s, &traj.snapshots[t + 1], traj.dt));
        }
    }
    if nodes.is_empty() {
        return Err(Error::invalid("normalization statistics need at least one snapshot pair"));
    }
    Ok(Normalization {
        node: ChannelStats::from_rows(nodes.chunks(NODE_FEATURES), NODE_FEATURES, &[])?,
        edge: ChannelStats::from_rows(edges.chunks(EDGE_FEATURES), EDGE_FEATURES, &[0, 1, 2])?,
        target: ChannelStats::from_rows(targets.chunks(STATE_DIM), STATE_DIM, &(0..STATE_DIM).collect::<Vec<_>>())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::MaterialParams;
    use crate::mesh::build_beam_mesh;

    fn brick() -> SolidMesh {
        build_beam_mesh(1.0, 1.0, 1.0, 1, 1, 1, MaterialParams::default()).unwrap()
    }

    #[test]
    fn single_hex_has_24_directed_edges() {
        let mesh = brick();
        let state = StateField::rest(&mesh.rest_positions);
        let g = mesh_to_graph(&mesh, &state, &LoadCase::unloaded(), 0, &Normalization::identity()).unwrap();
        assert_eq!(g.n_vertices, 8);
        assert_eq!(g.n_edges(), 24);
        let set: std::collections::BTreeSet<_> = g.edges().collect();
        for &(s, d) in &set {
            assert!(set.contains(&(d, s)));
        }
        for d in 0..8 {
            assert_eq!(g.incoming.segment(d).len(), 3);
            for &e in g.incoming.segment(d) {
                assert_eq!(g.dst[e], d);
            }
        }
    }

    #[test]
    fn edge_features_antisymmetric() {
        let mesh = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 8, MaterialParams::default()).unwrap();
        let mut state = StateField::rest(&mesh.rest_positions);
        for (i, n) in state.nodes.iter_mut().enumerate() {
            n.q[0] += 0.01 * (i as f64).sin();
        }
        let stats = Normalization {
            edge: ChannelStats {
                mean: vec![0.0, 0.0, 0.0, 2.0],
                std: vec![3.0, 0.7, 5.0, 1.5],
            },
            ..Normalization::identity()
        };
        let g = mesh_to_graph(&mesh, &state, &LoadCase::unloaded(), 0, &stats).unwrap();
        let index: std::collections::HashMap<_, _> = g.edges().enumerate().map(|(k, e)| (e, k)).collect();
        for (k, (s, d)) in g.edges().enumerate() {
            let r = index[&(d, s)];
            for c in 0..3 {
                assert_eq!(g.edge_features.row(k)[c], -g.edge_features.row(r)[c]);
            }
            assert_eq!(g.edge_features.row(k)[3], g.edge_features.row(r)[3]);
        }
    }

    #[test]
    fn translation_by_representable_offset_is_exact() {
        let mesh = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 8, MaterialParams::default()).unwrap();
        let state = StateField::rest(&mesh.rest_positions);
        let mut moved = state.clone();
        for n in &mut moved.nodes {
            n.q[0] += 5.0;
        }
        let stats = Normalization::identity();
        let a = mesh_to_graph(&mesh, &state, &LoadCase::unloaded(), 0, &stats).unwrap();
        let b = mesh_to_graph(&mesh, &moved, &LoadCase::unloaded(), 0, &stats).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loaded_node_is_tagged() {
        let mesh = brick();
        let state = StateField::rest(&mesh.rest_positions);
        let load = LoadCase::new(vec![6], [0.0, -3.0, 0.0], (0, 5));
        let g = mesh_to_graph(&mesh, &state, &load, 0, &Normalization::identity()).unwrap();
        let row = g.node_features.row(6);
        assert_eq!(&row[9..12], &[0.0, 0.0, 1.0]);
        assert_eq!(&row[12..15], &[0.0, -3.0, 0.0]);
        assert_eq!(&g.node_features.row(0)[9..12], &[0.0, 1.0, 0.0]);
        let later = mesh_to_graph(&mesh, &state, &load, 5, &Normalization::identity()).unwrap();
        assert_eq!(&later.node_features.row(6)[9..15], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn channel_stats_population_convention() {
        let rows = [[0.0, 5.0], [2.0, 5.0]];
        let s = ChannelStats::from_rows(rows.iter().map(|r| &r[..]), 2, &[]).unwrap();
        assert_eq!(s.mean, vec![1.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        let mut x = [0.3, -7.1];
        s.normalize(&mut x);
        s.denormalize(&mut x);
        assert!((x[0] - 0.3).abs() < 1e-12 && (x[1] + 7.1).abs() < 1e-12);
        assert!(ChannelStats::from_rows(std::iter::empty(), 2, &[]).is_err());
    }

    #[test]
    fn identical_snapshots_give_unit_std() {
        let mesh = brick();
        let rest = StateField::rest(&mesh.rest_positions);
        let traj = Trajectory {
            load: LoadCase::unloaded(),
            dt: 0.1,
            snapshots: vec![rest.clone(), rest.clone(), rest],
        };
        let stats = normalization_stats(&mesh, &[&traj]).unwrap();
        assert!(stats.target.std.iter().all(|&s| s == 1.0));
        assert!(stats.node.std[..9].iter().all(|&s| s == 1.0));
        stats.validate().unwrap();
        assert!(normalization_stats(&mesh, &[]).is_err());
    }

    #[test]
    fn union_offsets_ids() {
        let mesh = brick();
        let state = StateField::rest(&mesh.rest_positions);
        let g = mesh_to_graph(&mesh, &state, &LoadCase::unloaded(), 0, &Normalization::identity()).unwrap();
        let u = SimGraph::union(&[&g, &g]);
        assert_eq!((u.n_vertices, u.n_edges()), (16, 48));
        assert_eq!(u.src[24], g.src[0] + 8);
        assert_eq!(u.incoming.segment(9), &g.incoming.segment(1).iter().map(|e| e + 24).collect::<Vec<_>>()[..]);
    }
}
