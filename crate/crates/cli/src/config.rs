//! Pipeline configuration (`pipeline/1`) and the shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tignn_core::fem::{DatasetSpec, MaterialParams, SolverOptions};
use tignn_core::io::{from_json, read_text};
use tignn_core::render::{axis_angle, Camera, ModelPose, PhongMaterial, Vec3};
use tignn_core::train::TrainConfig;
use tignn_core::{Error, Result};
use tignn_session::scene::{BodyConfig, ContactSettings, MeshSource, PokeSettings, ScalarField, SceneConfig, SCENE_SCHEMA};

use crate::manifest::MANIFEST_SCHEMA;

pub const PIPELINE_SCHEMA: &str = "pipeline/1";

pub const PRESETS: [&str; 5] = ["beam-desk", "beam-paper", "two-beam-scene", "bunny-desk", "toy-overfit"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub camera: Camera,
    pub width: usize,
    pub height: usize,
    pub point_radius: usize,
    #[serde(default)]
    pub scalar: ScalarField,
    /// Defaults to two standard deviations of the field in the training data.
    #[serde(default)]
    pub colormap_range: Option<[f64; 2]>,
    /// Rollout length; defaults to the dataset's `nt`.
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default = "yes")]
    pub wireframe: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyPlacement {
    pub name: String,
    #[serde(default)]
    pub pose: ModelPose,
}

/// How `serve` lays out copies of the pipeline mesh when no scene file is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub bodies: Vec<BodyPlacement>,
    #[serde(default)]
    pub contact: bool,
    #[serde(default)]
    pub poke: PokeSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema: String,
    pub name: String,
    pub mesh: MeshSource,
    pub material: MaterialParams,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub scene: SceneLayout,
}

fn look_at(eye: Vec3, target: Vec3) -> Camera {
    Camera::look_at(eye, target, [0.0, 0.0, 1.0], 0.8, 1.0, 1000.0).expect("preset cameras are valid")
}

fn beam_render() -> RenderConfig {
    RenderConfig {
        camera: look_at([45.0, -60.0, 38.0], [5.0, 5.0, 20.0]),
        width: 320,
        height: 320,
        point_radius: 2,
        scalar: ScalarField::SigmaZz,
        colormap_range: None,
        frames: None,
        wireframe: true,
    }
}

fn single(poke: PokeSettings) -> SceneLayout {
    SceneLayout {
        bodies: vec![BodyPlacement {
            name: "body".into(),
            pose: ModelPose::default(),
        }],
        contact: false,
        poke,
    }
}

/// Second beam rotated a quarter turn about y so it runs along x above the
/// first one's free end, 10 units away in y.
pub fn crossing_pose() -> ModelPose {
    ModelPose {
        translation: [-15.0, 20.0, 40.0],
        rotation: axis_angle([0.0, 1.0, 0.0], std::f64::consts::FRAC_PI_2),
        scale: [1.0; 3],
    }
}

fn beam_desk() -> PipelineConfig {
    PipelineConfig {
        schema: PIPELINE_SCHEMA.into(),
        name: "beam-desk".into(),
        mesh: MeshSource::Beam {
            h: 10.0,
            w: 10.0,
            l: 40.0,
            nx: 2,
            ny: 2,
            nz: 8,
        },
        material: MaterialParams::beam(),
        data: DatasetSpec {
            load_positions: 30,
            force_magnitude: 1e5,
            nt: 20,
            dt: 5e-2,
            split: 0.8,
            seed: 0,
            solver: SolverOptions::default(),
        },
        train: TrainConfig {
            epochs: 300,
            batch_size: 8,
            lr: 1e-3,
            lambda_d: 1e-2,
            noise: 1e-3,
            seed: 0,
            k: 3,
            hidden: 32,
            dt: 5e-2,
            split: 0.8,
        },
        render: beam_render(),
        scene: single(PokeSettings::default()),
    }
}

/// Looks up a shipped preset by name.
pub fn preset(name: &str) -> Result<PipelineConfig> {
    let mut cfg = beam_desk();
    cfg.name = name.to_string();
    match name {
        "beam-desk" => {}
        "beam-paper" => {
            cfg.mesh = MeshSource::Beam {
                h: 10.0,
                w: 10.0,
                l: 40.0,
                nx: 5,
                ny: 5,
                nz: 20,
            };
            cfg.data.load_positions = 52;
            cfg.train = TrainConfig {
                epochs: 2000,
                ..TrainConfig::default()
            };
        }
        "two-beam-scene" => {
            cfg.scene.bodies = vec![
                BodyPlacement {
                    name: "upright".into(),
                    pose: ModelPose::default(),
                },
                BodyPlacement {
                    name: "crossing".into(),
                    pose: crossing_pose(),
                },
            ];
            cfg.scene.contact = true;
            cfg.render.camera = look_at([90.0, -80.0, 70.0], [5.0, 12.0, 30.0]);
        }
        "bunny-desk" => {
            cfg.mesh = MeshSource::Blob {
                radii: [30.0, 30.0, 24.0],
                cells: 6,
            };
            cfg.material = MaterialParams::soft();
            cfg.data.load_positions = 100;
            cfg.data.force_magnitude = 1.0;
            cfg.render.camera = look_at([90.0, -110.0, 60.0], [0.0, 0.0, 0.0]);
            cfg.render.scalar = ScalarField::VonMises;
            cfg.scene = single(PokeSettings {
                magnitude: 1.0,
                ..PokeSettings::default()
            });
        }
        "toy-overfit" => {
            cfg.mesh = MeshSource::Beam {
                h: 10.0,
                w: 10.0,
                l: 40.0,
                nx: 1,
                ny: 1,
                nz: 2,
            };
            cfg.data.load_positions = 2;
            cfg.data.nt = 5;
            cfg.data.split = 0.5;
            cfg.train = TrainConfig {
                epochs: 2000,
                batch_size: 5,
                lr: 3e-3,
                lambda_d: 0.0,
                noise: 0.0,
                seed: 0,
                k: 2,
                hidden: 16,
                dt: 5e-2,
                split: 0.5,
            };
            cfg.render.camera = look_at([60.0, -80.0, 40.0], [5.0, 5.0, 10.0]);
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown preset \"{other}\" (available: {})",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(cfg)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != PIPELINE_SCHEMA {
            return Err(Error::schema(
                "schema",
                format!("expected \"{PIPELINE_SCHEMA}\", found \"{}\"", self.schema),
            ));
        }
        self.material.validate()?;
        self.train.validate()?;
        self.render.camera.validate()?;
        if self.render.width == 0 || self.render.height == 0 {
            return Err(Error::schema("render", "image size must be positive"));
        }
        if (self.data.dt - self.train.dt).abs() > 1e-12 * self.data.dt {
            return Err(Error::schema(
                "train.dt",
                format!("differs from data.dt ({} vs {})", self.train.dt, self.data.dt),
            ));
        }
        if self.scene.bodies.is_empty() {
            return Err(Error::schema("scene.bodies", "at least one body is required"));
        }
        for (i, b) in self.scene.bodies.iter().enumerate() {
            b.pose.validate().map_err(|e| Error::schema(format!("scene.bodies[{i}].pose"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.train.seed = seed;
    }

    /// Scene file equivalent of the layout, with every body running `checkpoint`.
    pub fn scene_config(&self, checkpoint: &Path, camera: Option<Camera>) -> SceneConfig {
        SceneConfig {
            schema: SCENE_SCHEMA.to_string(),
            bodies: self
                .scene
                .bodies
                .iter()
                .map(|b| BodyConfig {
                    name: b.name.clone(),
                    mesh: self.mesh.clone(),
                    checkpoint: checkpoint.to_path_buf(),
                    pose: b.pose.clone(),
                })
                .collect(),
            camera: camera.unwrap_or_else(|| self.render.camera.clone()),
            light: [0.3, 0.5, 1.0],
            material: PhongMaterial::default(),
            contact: self.scene.contact.then(ContactSettings::default),
            tick_dt: Some(self.data.dt),
            poke: self.scene.poke.clone(),
            scalar: self.render.scalar,
            colormap_range: self.render.colormap_range,
            realtime: true,
        }
    }
}

/// A configuration file: a pipeline config, a scene file (serve only) or the
/// manifest of an earlier run, whose snapshot is reused verbatim.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigFile {
    Pipeline(PipelineConfig),
    Scene(SceneConfig, PathBuf),
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let value: Value = from_json(&read_text(path)?)?;
    from_value(value, path)
}

fn from_value(value: Value, path: &Path) -> Result<ConfigFile> {
    let schema = value.get("schema").and_then(Value::as_str).unwrap_or_default().to_string();
    let parse_err = |e: serde_json::Error| Error::schema(path.display().to_string(), e.to_string());
    match schema.as_str() {
        PIPELINE_SCHEMA => {
            let cfg: PipelineConfig = serde_json::from_value(value).map_err(parse_err)?;
            cfg.validate()?;
            Ok(ConfigFile::Pipeline(cfg))
        }
        SCENE_SCHEMA => {
            let cfg: SceneConfig = serde_json::from_value(value).map_err(parse_err)?;
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            Ok(ConfigFile::Scene(cfg, base))
        }
        MANIFEST_SCHEMA => {
            let inner = value
                .get("config")
                .cloned()
                .ok_or_else(|| Error::schema("config", "manifest has no configuration snapshot"))?;
            from_value(inner, path)
        }
        other => Err(Error::schema(
            "schema",
            format!("expected \"{PIPELINE_SCHEMA}\", \"{SCENE_SCHEMA}\" or \"{MANIFEST_SCHEMA}\", found \"{other}\""),
        )),
    }
}
