//! Load-case sampling, batch simulation and the `traj/1` dataset file.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::material::MaterialParams;
use super::solver::{simulate, SolverOptions};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh, save_mesh, SolidMesh};
use crate::state::{LoadCase, NodeState, StateField, Trajectory};

pub const TRAJ_SCHEMA: &str = "traj/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub load_positions: usize,
    pub force_magnitude: f64,
    pub nt: usize,
    pub dt: f64,
    pub split: f64,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub mesh: SolidMesh,
    pub dt: f64,
    pub solver: SolverOptions,
    pub cases: Vec<Trajectory>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn train_cases(&self) -> Vec<&Trajectory> {
        self.train.iter().map(|&i| &self.cases[i]).collect()
    }

    pub fn test_cases(&self) -> Vec<&Trajectory> {
        self.test.iter().map(|&i| &self.cases[i]).collect()
    }
}

/// Load cases: `count` distinct free surface nodes chosen by `seed`, each
/// pushed along its inward normal with `force_magnitude` for the whole window.
pub fn sample_load_cases(
    mesh: &SolidMesh,
    count: usize,
    force_magnitude: f64,
    nt: usize,
    seed: u64,
) -> Result<Vec<LoadCase>> {
    if count == 0 {
        return Err(Error::invalid("at least one load position is required"));
    }
    let candidates: Vec<usize> = mesh
        .surface_nodes()
        .into_iter()
        .filter(|&i| !mesh.is_fixed(i))
        .collect();
    if candidates.len() < count {
        return Err(Error::invalid(format!(
            "requested {count} load positions but the mesh has only {} free surface nodes",
            candidates.len()
        )));
    }
    let normals = mesh.vertex_normals(&mesh.rest_positions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = candidates;
    picked.shuffle(&mut rng);
    picked.truncate(count);
    Ok(picked
        .into_iter()
        .map(|node| {
            let n = normals[node];
            LoadCase::new(vec![node], n.map(|c| -c * force_magnitude), (0, nt))
        })
        .collect())
}

/// Deterministic train/test partition of `n` case indices.
pub fn split_indices(n: usize, split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::invalid(format!("split must lie in (0, 1), got {split}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    idx.shuffle(&mut rng);
    let n_train = (split * n as f64).round() as usize;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

const SPLIT_SALT: u64 = 0x5eed_0000_0000_5917;

pub fn generate_dataset(mesh: &SolidMesh, mat: &MaterialParams, spec: &DatasetSpec) -> Result<Dataset> {
    mat.validate()?;
    let mut mesh = mesh.clone();
    mesh.material = mat.clone();
    let loads = sample_load_cases(&mesh, spec.load_positions, spec.force_magnitude, spec.nt, spec.seed)?;
    let cases = simulate_cases(&mesh, &loads, spec.nt, spec.dt, &spec.solver)?;
    let (train, test) = split_indices(cases.len(), spec.split, spec.seed)?;
    Ok(Dataset {
        mesh,
        dt: spec.dt,
        solver: spec.solver.clone(),
        cases,
        train,
        test,
    })
}

/// Simulates independent load cases on all available cores; output order follows `loads`.
pub fn simulate_cases(
    mesh: &SolidMesh,
    loads: &[LoadCase],
    nt: usize,
    dt: f64,
    opts: &SolverOptions,
) -> Result<Vec<Trajectory>> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(loads.len().max(1));
    let mut results: Vec<Option<Result<Trajectory>>> = (0..loads.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in results.chunks_mut(loads.len().div_ceil(workers).max(1)).enumerate() {
            let start = w * loads.len().div_ceil(workers).max(1);
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(simulate(mesh, &loads[start + k], nt, dt, opts));
                }
            });
        }
    });
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.expect("every case is simulated").map_err(|e| Error::InCase {
                case: i,
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub t: f64,
    pub q: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub sigma: Vec<[f64; 6]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseFile {
    pub loaded_nodes: Vec<usize>,
    pub force: [f64; 3],
    pub active_steps: [usize; 2],
    pub snapshots: Vec<SnapshotFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetFile {
    pub schema: String,
    pub mesh_ref: String,
    pub dt: f64,
    pub material: MaterialParams,
    pub solver: SolverOptions,
    pub split: SplitFile,
    pub cases: Vec<CaseFile>,
}

impl From<&StateField> for SnapshotFile {
    fn from(s: &StateField) -> Self {
        SnapshotFile {
            t: s.time,
            q: s.nodes.iter().map(|n| n.q).collect(),
            v: s.nodes.iter().map(|n| n.v).collect(),
            sigma: s.nodes.iter().map(|n| n.sigma).collect(),
        }
    }
}

impl SnapshotFile {
    fn into_state(self, location: &str, n_nodes: usize) -> Result<StateField> {
        if self.q.len() != n_nodes || self.v.len() != n_nodes || self.sigma.len() != n_nodes {
            return Err(Error::schema(
                location,
                format!("snapshot arrays must have {n_nodes} entries"),
            ));
        }
        Ok(StateField {
            nodes: self
                .q
                .into_iter()
                .zip(self.v)
                .zip(self.sigma)
                .map(|((q, v), sigma)| NodeState { q, v, sigma })
                .collect(),
            time: self.t,
        })
    }
}

/// Writes the dataset and its mesh (`<stem>.mesh.json`, referenced by relative path).
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mesh_path = mesh_path_for(path);
    save_mesh(&ds.mesh, &mesh_path)?;
    let file = DatasetFile {
        schema: TRAJ_SCHEMA.to_string(),
        mesh_ref: mesh_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        dt: ds.dt,
        material: ds.mesh.material.clone(),
        solver: ds.solver.clone(),
        split: SplitFile {
            train: ds.train.clone(),
            test: ds.test.clone(),
        },
        cases: ds
            .cases
            .iter()
            .map(|c| CaseFile {
                loaded_nodes: c.load.loaded_nodes.clone(),
                force: c.load.force_per_node,
                active_steps: [c.load.active_steps.0, c.load.active_steps.1],
                snapshots: c.snapshots.iter().map(SnapshotFile::from).collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Json {
        context: "serializing dataset".into(),
        source: e,
    })?;
    crate::io::write_atomic(path, text)
}

fn mesh_path_for(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    path.with_file_name(format!("{stem}.mesh.json"))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| {
        Error::schema(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    if file.schema != TRAJ_SCHEMA {
        return Err(Error::schema(
            "schema",
            format!("expected \"{TRAJ_SCHEMA}\", found \"{}\"", file.schema),
        ));
    }
    let mesh_path = path
        .parent()
        .map(|p| p.join(&file.mesh_ref))
        .unwrap_or_else(|| PathBuf::from(&file.mesh_ref));
    let mut mesh = load_mesh(&mesh_path)?;
    mesh.material = file.material;
    let n = mesh.n_nodes();
    let mut cases = Vec::with_capacity(file.cases.len());
    for (ci, case) in file.cases.into_iter().enumerate() {
        let load = LoadCase::new(case.loaded_nodes, case.force, (case.active_steps[0], case.active_steps[1]));
        load.validate(n, &mesh.fixed_nodes)
            .map_err(|e| Error::schema(format!("cases[{ci}]"), e.to_string()))?;
        let snapshots = case
            .snapshots
            .into_iter()
            .enumerate()
            .map(|(si, s)| s.into_state(&format!("cases[{ci}].snapshots[{si}]"), n))
            .collect::<Result<Vec<_>>>()?;
        cases.push(Trajectory {
            load,
            dt: file.dt,
            snapshots,
        });
    }
    for (name, ids) in [("split.train", &file.split.train), ("split.test", &file.split.test)] {
        if let Some(&bad) = ids.iter().find(|&&i| i >= cases.len()) {
            return Err(Error::schema(name, format!("case index {bad} out of range")));
        }
    }
    Ok(Dataset {
        mesh,
        dt: file.dt,
        solver: file.solver,
        cases,
        train: file.split.train,
        test: file.split.test,
    })
}
