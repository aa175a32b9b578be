//! `ckpt/1`: architecture, flat weights per layer, frozen normalization and
//! the training configuration that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Normalization, EDGE_FEATURES, NODE_FEATURES};
use crate::io::{from_json, read_text, to_json, write_atomic};
use crate::nn::Tensor;
use crate::state::STATE_DIM;
use crate::tignn::{ModelConfig, TignnModel};
use crate::train::TrainConfig;

pub const CKPT_SCHEMA: &str = "ckpt/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub k: usize,
    pub node_features: usize,
    pub edge_features: usize,
    pub state_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub architecture: Architecture,
    pub layers: Vec<LayerRecord>,
    pub normalization: Normalization,
    pub dt: f64,
    pub train_config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
}

/// Hex SHA-256 of the configuration's canonical JSON.
pub fn config_hash(cfg: &TrainConfig) -> Result<String> {
    let text = to_json(cfg, "training configuration")?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

impl Checkpoint {
    pub fn new(model: &TignnModel, normalization: &Normalization, train_config: &TrainConfig) -> Result<Self> {
        model.validate()?;
        normalization.validate()?;
        let mut layers = Vec::new();
        for (name, mlp) in model.mlps() {
            for (i, l) in mlp.layers.iter().enumerate() {
                layers.push(LayerRecord {
                    name: format!("{name}.{i}"),
                    n_in: l.n_in(),
                    n_out: l.n_out(),
                    weight: l.weight.data.clone(),
                    bias: l.bias.data.clone(),
                });
            }
        }
        Ok(Checkpoint {
            schema: CKPT_SCHEMA.to_string(),
            architecture: Architecture {
                hidden: model.config.hidden,
                k: model.config.k,
                node_features: NODE_FEATURES,
                edge_features: EDGE_FEATURES,
                state_dim: STATE_DIM,
            },
            layers,
            normalization: normalization.clone(),
            dt: train_config.dt,
            train_config: train_config.clone(),
            config_hash: config_hash(train_config)?,
            seed: train_config.seed,
        })
    }

    /// Rebuilds the model, checking every record against the architecture.
    pub fn model(&self) -> Result<TignnModel> {
        let a = &self.architecture;
        if a.node_features != NODE_FEATURES || a.edge_features != EDGE_FEATURES || a.state_dim != STATE_DIM {
            return Err(Error::schema(
                "architecture",
                format!(
                    "feature widths ({}, {}, {}) differ from this build ({NODE_FEATURES}, {EDGE_FEATURES}, {STATE_DIM})",
                    a.node_features, a.edge_features, a.state_dim
                ),
            ));
        }
        let mut model = TignnModel::new(
            ModelConfig {
                hidden: a.hidden,
                k: a.k,
            },
            0,
        )
        .map_err(|e| Error::schema("architecture", e.to_string()))?;
        let names: Vec<String> = model
            .mlps()
            .iter()
            .flat_map(|(n, m)| (0..m.layers.len()).map(move |i| format!("{n}.{i}")))
            .collect();
        if names.len() != self.layers.len() {
            return Err(Error::schema(
                "layers",
                format!("expected {} layers, found {}", names.len(), self.layers.len()),
            ));
        }
        let mut params = model.params_mut();
        for (i, (rec, name)) in self.layers.iter().zip(&names).enumerate() {
            let loc = format!("layers[{i}]");
            if &rec.name != name {
                return Err(Error::schema(loc, format!("expected layer {name}, found {}", rec.name)));
            }
            let (w, b) = (&params[2 * i], &params[2 * i + 1]);
            let shape = [w.shape[0], w.shape[1]];
            if [rec.n_out, rec.n_in] != shape || rec.weight.len() != w.len() || rec.bias.len() != b.len() {
                return Err(Error::schema(loc, format!("{name} must be {} x {}", shape[0], shape[1])));
            }
            *params[2 * i] = Tensor::new(w.shape.clone(), rec.weight.clone())?;
            *params[2 * i + 1] = Tensor::new(vec![rec.bias.len()], rec.bias.clone())?;
        }
        model.validate().map_err(|e| Error::schema("layers", e.to_string()))?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CKPT_SCHEMA {
            return Err(Error::schema(
                "schema",
                format!("expected \"{CKPT_SCHEMA}\", found \"{}\"", self.schema),
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::schema("dt", "must be positive"));
        }
        self.normalization
            .validate()
            .map_err(|e| Error::schema("normalization", e.to_string()))?;
        if config_hash(&self.train_config)? != self.config_hash {
            return Err(Error::schema("config_hash", "does not match train_config"));
        }
        self.model().map(|_| ())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, to_json(self, "checkpoint")?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Checkpoint = from_json(&read_text(path)?)?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = TrainConfig {
            hidden: 5,
            k: 2,
            ..TrainConfig::default()
        };
        let model = TignnModel::new(cfg.model_config(), 11).unwrap();
        let ck = Checkpoint::new(&model, &Normalization::identity(), &cfg).unwrap();
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.model().unwrap(), model);
    }

    #[test]
    fn tampered_records_are_rejected() {
        let cfg = TrainConfig {
            hidden: 3,
            k: 1,
            ..TrainConfig::default()
        };
        let model = TignnModel::new(cfg.model_config(), 0).unwrap();
        let ck = Checkpoint::new(&model, &Normalization::identity(), &cfg).unwrap();

        let mut bad = ck.clone();
        bad.layers[2].weight.pop();
        assert!(matches!(bad.validate(), Err(Error::SchemaViolation { .. })));

        let mut bad = ck.clone();
        bad.train_config.lr = 0.5;
        assert!(matches!(bad.validate(), Err(Error::SchemaViolation { .. })));

        let mut bad = ck;
        bad.schema = "ckpt/0".into();
        assert!(bad.validate().is_err());
    }
}
