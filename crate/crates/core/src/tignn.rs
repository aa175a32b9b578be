//! Encode-process-decode graph network emitting per-node GENERIC ingredients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SimGraph, EDGE_FEATURES, NODE_FEATURES};
use crate::nn::activation::tanh_in_place;
use crate::nn::gemm::{gemm_nt, Init, PackedWeights};
use crate::nn::{Mlp, Tape, Tensor, TriKind, Var};
use crate::state::STATE_DIM;

pub const L_PARAMS: usize = STATE_DIM * (STATE_DIM - 1) / 2;
pub const M_PARAMS: usize = STATE_DIM * (STATE_DIM + 1) / 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Message-passing depth.
    pub k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 64, k: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessorBlock {
    pub edge_update: Mlp,
    pub node_update: Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TignnModel {
    pub config: ModelConfig,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub blocks: Vec<ProcessorBlock>,
    pub de_head: Mlp,
    pub ds_head: Mlp,
    pub l_head: Mlp,
    pub m_head: Mlp,
}

/// Decoder outputs, one row per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct GenericOutputs {
    pub de: Tensor,
    pub ds: Tensor,
    pub l_params: Tensor,
    pub m_params: Tensor,
}

impl GenericOutputs {
    pub fn n_vertices(&self) -> usize {
        self.de.rows()
    }

    pub fn all_finite(&self) -> bool {
        self.de.all_finite() && self.ds.all_finite() && self.l_params.all_finite() && self.m_params.all_finite()
    }
}

/// Tape handles for the decoder outputs of a traced forward pass.
#[derive(Clone, Copy, Debug)]
pub struct TracedOutputs {
    pub de: Var,
    pub ds: Var,
    pub l_params: Var,
    pub m_params: Var,
}

impl TignnModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = |n_in: usize, n_out: usize| Mlp::new(&[n_in, h, n_out], &mut rng);
        let node_encoder = mlp(NODE_FEATURES, h)?;
        let edge_encoder = mlp(EDGE_FEATURES, h)?;
        let mut blocks = Vec::with_capacity(config.k);
        for _ in 0..config.k {
            blocks.push(ProcessorBlock {
                edge_update: mlp(3 * h, h)?,
                node_update: mlp(2 * h, h)?,
            });
        }
        Ok(TignnModel {
            config,
            node_encoder,
            edge_encoder,
            blocks,
            de_head: mlp(h, STATE_DIM)?,
            ds_head: mlp(h, STATE_DIM)?,
            l_head: mlp(h, L_PARAMS)?,
            m_head: mlp(h, M_PARAMS)?,
        })
    }

    /// Every MLP in parameter order.
    pub fn mlps(&self) -> Vec<(String, &Mlp)> {
        let mut out = vec![
            ("node_encoder".to_string(), &self.node_encoder),
            ("edge_encoder".to_string(), &self.edge_encoder),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.edge_update"), &b.edge_update));
            out.push((format!("block{i}.node_update"), &b.node_update));
        }
        out.push(("de_head".to_string(), &self.de_head));
        out.push(("ds_head".to_string(), &self.ds_head));
        out.push(("l_head".to_string(), &self.l_head));
        out.push(("m_head".to_string(), &self.m_head));
        out
    }

    fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        let mut out = vec![&mut self.node_encoder, &mut self.edge_encoder];
        for b in &mut self.blocks {
            out.push(&mut b.edge_update);
            out.push(&mut b.node_update);
        }
        out.extend([&mut self.de_head, &mut self.ds_head, &mut self.l_head, &mut self.m_head]);
        out
    }

    /// Flat parameter list (weight, bias per layer, MLPs in `mlps()` order).
    pub fn params(&self) -> Vec<&Tensor> {
        self.mlps().into_iter().flat_map(|(_, m)| m.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlps_mut().into_iter().flat_map(|m| m.params_mut()).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (name, m) in self.mlps() {
            for l in 0..m.layers.len() {
                names.push(format!("{name}.{l}.weight"));
                names.push(format!("{name}.{l}.bias"));
            }
        }
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.mlps().iter().map(|(_, m)| m.n_params()).sum()
    }

    /// Checks that every MLP has the widths the architecture requires.
    pub fn validate(&self) -> Result<()> {
        let h = self.config.hidden;
        let mut expect = vec![(NODE_FEATURES, h), (EDGE_FEATURES, h)];
        for _ in 0..self.config.k {
            expect.push((3 * h, h));
            expect.push((2 * h, h));
        }
        expect.extend([(h, STATE_DIM), (h, STATE_DIM), (h, L_PARAMS), (h, M_PARAMS)]);
        let mlps = self.mlps();
        if mlps.len() != expect.len() {
            return Err(Error::invalid(format!(
                "model has {} processor blocks, config says {}",
                self.blocks.len(),
                self.config.k
            )));
        }
        for ((name, m), (i, o)) in mlps.iter().zip(expect) {
            let chained = m.layers.windows(2).all(|w| w[0].n_out() == w[1].n_in());
            let shapes_ok = m.layers.iter().all(|l| {
                l.weight.shape.len() == 2 && l.weight.len() == l.n_in() * l.n_out() && l.bias.len() == l.n_out()
            });
            if m.layers.is_empty() || !chained || !shapes_ok || m.n_in() != i || m.n_out() != o {
                return Err(Error::invalid(format!("{name} does not map {i} -> {o}")));
            }
        }
        if self.params().iter().any(|p| !p.all_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(())
    }

    fn check_graph(&self, g: &SimGraph) -> Result<()> {
        if g.node_features.cols() != NODE_FEATURES || g.edge_features.cols() != EDGE_FEATURES {
            return Err(Error::ShapeMismatch {
                expected: vec![NODE_FEATURES, EDGE_FEATURES],
                actual: vec![g.node_features.cols(), g.edge_features.cols()],
            });
        }
        Ok(())
    }

    /// Records the forward pass; parameter ids follow `params()` order.
    pub fn trace(&self, tape: &mut Tape, g: &SimGraph) -> Result<TracedOutputs> {
        self.check_graph(g)?;
        let mut id = 0;
        let mut run = |tape: &mut Tape, m: &Mlp, x: Var| -> Result<Var> {
            let y = m.trace(tape, x, id)?;
            id += 2 * m.layers.len();
            Ok(y)
        };
        let x = tape.input(g.node_features.clone());
        let e0 = tape.input(g.edge_features.clone());
        let mut h = run(tape, &self.node_encoder, x)?;
        let mut e = run(tape, &self.edge_encoder, e0)?;
        for b in &self.blocks {
            let hs = tape.gather_rows(h, g.src.clone())?;
            let hd = tape.gather_rows(h, g.dst.clone())?;
            let cat = tape.concat_cols(&[hs, hd, e])?;
            let de = run(tape, &b.edge_update, cat)?;
            e = tape.add(e, de)?;
            let agg = tape.scatter_sum(e, g.incoming.clone())?;
            let cat = tape.concat_cols(&[h, agg])?;
            let dh = run(tape, &b.node_update, cat)?;
            h = tape.add(h, dh)?;
        }
        Ok(TracedOutputs {
            de: run(tape, &self.de_head, h)?,
            ds: run(tape, &self.ds_head, h)?,
            l_params: run(tape, &self.l_head, h)?,
            m_params: run(tape, &self.m_head, h)?,
        })
    }

    /// Untraced forward pass. The first edge-update layer is split into
    /// sender, receiver and edge blocks so sender/receiver products are
    /// computed once per vertex instead of once per edge.
    pub fn forward(&self, g: &SimGraph) -> Result<GenericOutputs> {
        self.check_graph(g)?;
        let hd = self.config.hidden;
        let (n, ne) = (g.n_vertices, g.n_edges());
        let mut h = self.node_encoder.forward(&g.node_features)?.data;
        let mut e = self.edge_encoder.forward(&g.edge_features)?.data;
        let mut proj = vec![0.0; n * 2 * hd];
        let mut a = vec![0.0; ne * hd];
        let mut agg = vec![0.0; n * hd];
        let mut cat = vec![0.0; n * 2 * hd];
        let mut t = vec![0.0; n * hd];
        for b in &self.blocks {
            let l1 = &b.edge_update.layers[0];
            let l2 = &b.edge_update.layers[1];
            let m1 = &b.node_update.layers[0];
            let m2 = &b.node_update.layers[1];
            let (w_sd, w_e) = split_edge_weight(&l1.weight.data, hd);
            let w_sd = PackedWeights::pack(&w_sd, 2 * hd, hd);
            let w_e = PackedWeights::pack(&w_e, hd, hd);
            gemm_nt(n, &h, hd, &w_sd, Init::Zero, &mut proj, 2 * hd);
            gemm_nt(ne, &e, hd, &w_e, Init::Bias(&l1.bias.data), &mut a, hd);
            for k in 0..ne {
                let (s, d) = (g.src[k], g.dst[k]);
                let row = &mut a[k * hd..(k + 1) * hd];
                let ps = &proj[s * 2 * hd..s * 2 * hd + hd];
                let pd = &proj[d * 2 * hd + hd..(d + 1) * 2 * hd];
                for ((r, x), y) in row.iter_mut().zip(ps).zip(pd) {
                    *r += x + y;
                }
            }
            tanh_in_place(&mut a);
            let w2 = PackedWeights::pack(&l2.weight.data, hd, hd);
            gemm_nt(ne, &a, hd, &w2, Init::AccumulateBias(&l2.bias.data), &mut e, hd);
            g.incoming.sum_rows(&e, hd, &mut agg);
            for i in 0..n {
                cat[i * 2 * hd..i * 2 * hd + hd].copy_from_slice(&h[i * hd..(i + 1) * hd]);
                cat[i * 2 * hd + hd..(i + 1) * 2 * hd].copy_from_slice(&agg[i * hd..(i + 1) * hd]);
            }
            m1.forward_into(&cat, n, &mut t);
            tanh_in_place(&mut t);
            let w2 = PackedWeights::pack(&m2.weight.data, hd, hd);
            gemm_nt(n, &t, hd, &w2, Init::AccumulateBias(&m2.bias.data), &mut h, hd);
        }
        let h = Tensor {
            shape: vec![n, hd],
            data: h,
        };
        Ok(GenericOutputs {
            de: self.de_head.forward(&h)?,
            ds: self.ds_head.forward(&h)?,
            l_params: self.l_head.forward(&h)?,
            m_params: self.m_head.forward(&h)?,
        })
    }

    /// Zeroes every decoder weight and bias.
    pub fn zero_heads(&mut self) {
        for m in [&mut self.de_head, &mut self.ds_head, &mut self.l_head, &mut self.m_head] {
            for p in m.params_mut() {
                p.data.fill(0.0);
            }
        }
    }
}

/// Splits an `hd x 3hd` weight into the stacked sender/receiver block
/// (`2hd x hd`) and the edge block (`hd x hd`).
fn split_edge_weight(w: &[f64], hd: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sd = vec![0.0; 2 * hd * hd];
    let mut we = vec![0.0; hd * hd];
    for r in 0..hd {
        let row = &w[r * 3 * hd..(r + 1) * 3 * hd];
        sd[r * hd..(r + 1) * hd].copy_from_slice(&row[..hd]);
        sd[(hd + r) * hd..(hd + r + 1) * hd].copy_from_slice(&row[hd..2 * hd]);
        we[r * hd..(r + 1) * hd].copy_from_slice(&row[2 * hd..]);
    }
    (sd, we)
}

/// Traced outputs as plain tensors.
pub fn traced_values(tape: &Tape, t: &TracedOutputs) -> GenericOutputs {
    GenericOutputs {
        de: tape.value(t.de).clone(),
        ds: tape.value(t.ds).clone(),
        l_params: tape.value(t.l_params).clone(),
        m_params: tape.value(t.m_params).clone(),
    }
}

/// Traced `L dE + M dS` with `M = A A^T`.
pub fn trace_rate(tape: &mut Tape, t: &TracedOutputs) -> Result<Var> {
    let l_de = tape.tri(TriKind::Skew, t.l_params, t.de)?;
    let at_ds = tape.tri(TriKind::LowerTransposed, t.m_params, t.ds)?;
    let m_ds = tape.tri(TriKind::Lower, t.m_params, at_ds)?;
    tape.add(l_de, m_ds)
}

/// Traced degeneracy residual vectors `(L dS, M dE)`.
pub fn trace_degeneracy(tape: &mut Tape, t: &TracedOutputs) -> Result<(Var, Var)> {
    let l_ds = tape.tri(TriKind::Skew, t.l_params, t.ds)?;
    let at_de = tape.tri(TriKind::LowerTransposed, t.m_params, t.de)?;
    let m_de = tape.tri(TriKind::Lower, t.m_params, at_de)?;
    Ok((l_ds, m_de))
}
