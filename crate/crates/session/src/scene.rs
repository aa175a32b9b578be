//! Scene state and the fixed-timestep simulation loop body.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tignn_core::checkpoint::Checkpoint;
use tignn_core::fem::MaterialParams;
use tignn_core::generic::step;
use tignn_core::graph::{build_graph, GraphTopology, Normalization};
use tignn_core::interaction::{contact_forces, pick_nodes, pick_ray, poke_force, raycast, unproject, ContactConfig, Poke};
use tignn_core::io::{from_json, read_text};
use tignn_core::mesh::{build_beam_mesh, build_blob_mesh, load_mesh, SolidMesh};
use tignn_core::render::{colormap, mvp, Camera, ModelPose, PhongMaterial, Vec3};
use tignn_core::state::StateField;
use tignn_core::tignn::TignnModel;
use tignn_core::{Error, Result};

use crate::wire::{
    codes, BodyFrame, BodyInfo, CameraEvent, ErrorReply, Frame, Hello, Message, PokeEvent, WIRE_SCHEMA,
};

pub const SCENE_SCHEMA: &str = "scene/1";

/// Per-vertex quantity painted into frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarField {
    #[default]
    SigmaXx,
    SigmaYy,
    SigmaZz,
    SigmaXy,
    SigmaYz,
    SigmaXz,
    VonMises,
    Speed,
}

impl ScalarField {
    pub fn name(self) -> &'static str {
        match self {
            ScalarField::SigmaXx => "sigma_xx",
            ScalarField::SigmaYy => "sigma_yy",
            ScalarField::SigmaZz => "sigma_zz",
            ScalarField::SigmaXy => "sigma_xy",
            ScalarField::SigmaYz => "sigma_yz",
            ScalarField::SigmaXz => "sigma_xz",
            ScalarField::VonMises => "von_mises",
            ScalarField::Speed => "speed",
        }
    }

    fn voigt(self) -> Option<usize> {
        match self {
            ScalarField::SigmaXx => Some(0),
            ScalarField::SigmaYy => Some(1),
            ScalarField::SigmaZz => Some(2),
            ScalarField::SigmaXy => Some(3),
            ScalarField::SigmaYz => Some(4),
            ScalarField::SigmaXz => Some(5),
            _ => None,
        }
    }

    pub fn eval(self, state: &StateField) -> Vec<f64> {
        state
            .nodes
            .iter()
            .map(|n| match self.voigt() {
                Some(k) => n.sigma[k],
                None if self == ScalarField::Speed => n.v.iter().map(|x| x * x).sum::<f64>().sqrt(),
                None => {
                    let s = n.sigma;
                    let d = (s[0] - s[1]).powi(2) + (s[1] - s[2]).powi(2) + (s[2] - s[0]).powi(2);
                    (0.5 * d + 3.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5])).sqrt()
                }
            })
            .collect()
    }

    /// Colormap range from the training spread of the field: two standard
    /// deviations around zero for signed fields, `[0, 2 std]` otherwise.
    pub fn default_range(self, stats: &Normalization) -> [f64; 2] {
        let std = &stats.node.std;
        match self.voigt() {
            Some(k) => [-2.0 * std[3 + k], 2.0 * std[3 + k]],
            None if self == ScalarField::Speed => [0.0, 2.0 * std[..3].iter().cloned().fold(0.0, f64::max)],
            None => [0.0, 2.0 * std[3..9].iter().cloned().fold(0.0, f64::max)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshSource {
    /// `mesh/1` file, relative to the scene file.
    File { path: PathBuf },
    Beam {
        h: f64,
        w: f64,
        l: f64,
        nx: usize,
        ny: usize,
        nz: usize,
    },
    Blob { radii: Vec3, cells: usize },
}

impl MeshSource {
    pub fn build(&self, base: &Path) -> Result<SolidMesh> {
        match self {
            MeshSource::File { path } => load_mesh(base.join(path)),
            MeshSource::Beam { h, w, l, nx, ny, nz } => build_beam_mesh(*h, *w, *l, *nx, *ny, *nz, MaterialParams::beam()),
            MeshSource::Blob { radii, cells } => build_blob_mesh(*radii, *cells, MaterialParams::soft()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyConfig {
    pub name: String,
    pub mesh: MeshSource,
    /// `ckpt/1` file, relative to the scene file.
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub pose: ModelPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PokeSettings {
    pub magnitude: f64,
    /// Steps a poke stays active.
    pub duration: usize,
    /// Pick radius; defaults to 0.75 of the body's mean rest edge length.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Push along the inward surface normal instead of the pick ray.
    #[serde(default)]
    pub surface_normal: bool,
}

impl Default for PokeSettings {
    fn default() -> Self {
        PokeSettings {
            magnitude: 1e5,
            duration: 10,
            radius: None,
            surface_normal: false,
        }
    }
}

/// Contact parameters; missing values are derived from the meshes and the poke magnitude.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactSettings {
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub stiffness: Option<f64>,
}

fn default_light() -> Vec3 {
    [0.3, 0.5, 1.0]
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub schema: String,
    pub bodies: Vec<BodyConfig>,
    #[serde(default)]
    pub camera: Camera,
    /// Direction towards the light, world space.
    #[serde(default = "default_light")]
    pub light: Vec3,
    #[serde(default)]
    pub material: PhongMaterial,
    /// `None` disables body-body contact.
    #[serde(default)]
    pub contact: Option<ContactSettings>,
    /// Defaults to the first checkpoint's training dt.
    #[serde(default)]
    pub tick_dt: Option<f64>,
    #[serde(default)]
    pub poke: PokeSettings,
    #[serde(default)]
    pub scalar: ScalarField,
    #[serde(default)]
    pub colormap_range: Option<[f64; 2]>,
    /// Pace ticks at `tick_dt` of wall-clock time when serving.
    #[serde(default = "default_true")]
    pub realtime: bool,
}

impl SceneConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: SceneConfig = from_json(&read_text(path)?)?;
        if cfg.schema != SCENE_SCHEMA {
            return Err(Error::schema(
                "schema",
                format!("expected \"{SCENE_SCHEMA}\", found \"{}\"", cfg.schema),
            ));
        }
        Ok(cfg)
    }
}

pub struct Body {
    pub name: String,
    pub mesh: SolidMesh,
    topo: GraphTopology,
    pub model: TignnModel,
    pub stats: Normalization,
    pub pose: ModelPose,
    pub state: StateField,
    pub pokes: Vec<Poke>,
    mean_edge: f64,
}

impl Body {
    pub fn new(name: impl Into<String>, mesh: SolidMesh, model: TignnModel, stats: Normalization, pose: ModelPose) -> Result<Self> {
        model.validate()?;
        stats.validate()?;
        pose.validate()?;
        let state = StateField::rest(&mesh.rest_positions);
        let (_, mean_edge) = mesh.rest_edge_lengths();
        Ok(Body {
            name: name.into(),
            topo: GraphTopology::from_mesh(&mesh),
            mesh,
            model,
            stats,
            pose,
            state,
            pokes: Vec::new(),
            mean_edge,
        })
    }

    pub fn from_checkpoint(name: impl Into<String>, mesh: SolidMesh, ckpt: &Checkpoint, pose: ModelPose) -> Result<Self> {
        Body::new(name, mesh, ckpt.model()?, ckpt.normalization.clone(), pose)
    }

    pub fn world_positions(&self) -> Vec<Vec3> {
        self.state.nodes.iter().map(|n| self.pose.apply(n.q)).collect()
    }

    pub fn world_rest_positions(&self) -> Vec<Vec3> {
        self.mesh.rest_positions.iter().map(|&x| self.pose.apply(x)).collect()
    }

    pub fn mean_rest_edge(&self) -> f64 {
        self.mean_edge
    }

    fn reset(&mut self) {
        self.state = StateField::rest(&self.mesh.rest_positions);
        self.pokes.clear();
    }
}

/// Resolved scene parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSettings {
    pub camera: Camera,
    pub light: Vec3,
    pub material: PhongMaterial,
    pub contact: Option<ContactConfig>,
    pub tick_dt: f64,
    pub poke: PokeSettings,
    pub scalar: ScalarField,
    pub colormap_range: [f64; 2],
    pub realtime: bool,
}

/// Result of one tick: the frame to broadcast and, after a divergence, the
/// error that caused the automatic reset.
#[derive(Clone, Debug, PartialEq)]
pub struct TickOutput {
    pub frame: Frame,
    pub error: Option<ErrorReply>,
}

pub struct Scene {
    pub bodies: Vec<Body>,
    pub settings: SceneSettings,
    tick: u64,
    /// World-frame contact force per node from the last tick.
    pub last_contact: Vec<Vec<Vec3>>,
}

/// Default contact law: activation at half the mean rest edge, stiffness
/// such that a penetration of half the activation distance produces the
/// poke magnitude.
pub fn default_contact(bodies: &[Body], magnitude: f64) -> ContactConfig {
    let mean = bodies.iter().map(|b| b.mean_edge).sum::<f64>() / bodies.len().max(1) as f64;
    let eps = 0.5 * mean;
    ContactConfig {
        eps,
        stiffness: 2.0 * magnitude / eps,
    }
}

impl Scene {
    pub fn new(bodies: Vec<Body>, settings: SceneSettings) -> Result<Self> {
        if bodies.is_empty() {
            return Err(Error::invalid("a scene needs at least one body"));
        }
        settings.camera.validate()?;
        settings.material.validate()?;
        if let Some(c) = &settings.contact {
            c.validate()?;
        }
        if !(settings.tick_dt > 0.0 && settings.tick_dt.is_finite()) {
            return Err(Error::invalid(format!("tick_dt must be positive, got {}", settings.tick_dt)));
        }
        let [lo, hi] = settings.colormap_range;
        if !(lo < hi) {
            return Err(Error::invalid(format!("colormap range must be increasing, got [{lo}, {hi}]")));
        }
        if !(settings.poke.magnitude.is_finite() && settings.poke.radius.is_none_or(|r| r > 0.0)) {
            return Err(Error::invalid("poke magnitude must be finite and radius positive"));
        }
        let last_contact = bodies.iter().map(|b| vec![[0.0; 3]; b.mesh.n_nodes()]).collect();
        Ok(Scene {
            bodies,
            settings,
            tick: 0,
            last_contact,
        })
    }

    /// Loads meshes and checkpoints named in `cfg`; relative paths resolve against `base`.
    pub fn from_config(cfg: &SceneConfig, base: &Path) -> Result<Self> {
        if cfg.bodies.is_empty() {
            return Err(Error::schema("bodies", "a scene needs at least one body"));
        }
        let mut bodies = Vec::with_capacity(cfg.bodies.len());
        let mut dt = None;
        for (i, b) in cfg.bodies.iter().enumerate() {
            let mesh = b.mesh.build(base)?;
            let ckpt = Checkpoint::load(base.join(&b.checkpoint))?;
            dt.get_or_insert(ckpt.dt);
            let body = Body::from_checkpoint(&b.name, mesh, &ckpt, b.pose.clone())
                .map_err(|e| Error::schema(format!("bodies[{i}]"), e.to_string()))?;
            bodies.push(body);
        }
        let contact = cfg.contact.as_ref().map(|c| {
            let d = default_contact(&bodies, cfg.poke.magnitude);
            ContactConfig {
                eps: c.eps.unwrap_or(d.eps),
                stiffness: c.stiffness.unwrap_or(d.stiffness),
            }
        });
        let colormap_range = cfg.colormap_range.unwrap_or_else(|| cfg.scalar.default_range(&bodies[0].stats));
        let settings = SceneSettings {
            camera: cfg.camera.clone(),
            light: cfg.light,
            material: cfg.material.clone(),
            contact,
            tick_dt: cfg.tick_dt.or(dt).expect("at least one body"),
            poke: cfg.poke.clone(),
            scalar: cfg.scalar,
            colormap_range,
            realtime: cfg.realtime,
        };
        Scene::new(bodies, settings)
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn hello(&self) -> Hello {
        Hello {
            schema: WIRE_SCHEMA.to_string(),
            tick: self.tick,
            tick_dt: self.settings.tick_dt,
            bodies: self
                .bodies
                .iter()
                .map(|b| BodyInfo {
                    name: b.name.clone(),
                    n_nodes: b.mesh.n_nodes(),
                    rest_positions: b.mesh.rest_positions.clone(),
                    surface_triangles: b.mesh.surface_triangles.clone(),
                    fixed_nodes: b.mesh.fixed_nodes.clone(),
                    pose: b.pose.clone(),
                })
                .collect(),
            camera: self.settings.camera.clone(),
            scalar: self.settings.scalar.name().to_string(),
            colormap_range: self.settings.colormap_range,
        }
    }

    pub fn frame(&self) -> Frame {
        let [lo, hi] = self.settings.colormap_range;
        Frame {
            schema: WIRE_SCHEMA.to_string(),
            tick: self.tick,
            time: self.bodies[0].state.time,
            bodies: self
                .bodies
                .iter()
                .map(|b| {
                    let scalar = self.settings.scalar.eval(&b.state);
                    BodyFrame {
                        positions: b.state.positions(),
                        colors: scalar
                            .iter()
                            .map(|&s| colormap(s, lo, hi).map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
                            .collect(),
                        scalar,
                    }
                })
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for b in &mut self.bodies {
            b.reset();
        }
        for c in &mut self.last_contact {
            c.fill([0.0; 3]);
        }
    }

    /// Contact forces between every pair of bodies, world frame.
    pub fn contact_forces(&self) -> Result<Vec<Vec<Vec3>>> {
        let mut out: Vec<Vec<Vec3>> = self.bodies.iter().map(|b| vec![[0.0; 3]; b.mesh.n_nodes()]).collect();
        let Some(cfg) = &self.settings.contact else {
            return Ok(out);
        };
        let world: Vec<Vec<Vec3>> = self.bodies.iter().map(Body::world_positions).collect();
        let rest: Vec<Vec<Vec3>> = self.bodies.iter().map(Body::world_rest_positions).collect();
        for a in 0..self.bodies.len() {
            for b in a + 1..self.bodies.len() {
                let (fa, fb) = contact_forces(&world[a], &world[b], &rest[a], &rest[b], cfg)?;
                for (acc, f) in out[a].iter_mut().zip(&fa) {
                    for k in 0..3 {
                        acc[k] += f[k];
                    }
                }
                for (acc, f) in out[b].iter_mut().zip(&fb) {
                    for k in 0..3 {
                        acc[k] += f[k];
                    }
                }
            }
        }
        Ok(out)
    }

    fn advance(&mut self) -> Result<()> {
        let contact = self.contact_forces()?;
        let mut next = Vec::with_capacity(self.bodies.len());
        for (b, world) in self.bodies.iter().zip(&contact) {
            let mut forces: Vec<Vec3> = world.iter().map(|&f| b.pose.to_body_vector(f)).collect();
            for p in &b.pokes {
                p.accumulate(&mut forces);
            }
            let g = build_graph(&b.topo, &b.state, &forces, &b.stats)?;
            let out = b.model.forward(&g)?;
            if !out.all_finite() {
                return Err(Error::RolloutDivergence { step: self.tick as usize });
            }
            next.push(step(&b.state, &out, self.settings.tick_dt, &b.stats, &b.mesh, self.tick as usize)?);
        }
        for (b, s) in self.bodies.iter_mut().zip(next) {
            b.state = s;
            b.pokes.retain_mut(Poke::advance);
        }
        self.last_contact = contact;
        Ok(())
    }

    /// Contact, pokes, one learned step per body, poke countdown, frame.
    /// A failing step resets every body to rest and reports the error.
    pub fn tick(&mut self) -> TickOutput {
        let error = match self.advance() {
            Ok(()) => None,
            Err(e) => {
                log::warn!("tick {}: {e}; resetting scene", self.tick);
                self.reset();
                let code = if e.is_numerical() {
                    codes::ROLLOUT_DIVERGENCE
                } else {
                    codes::INVALID_ARGUMENT
                };
                Some(ErrorReply::new(code, format!("tick {}: {e}; scene reset to rest", self.tick)))
            }
        };
        self.tick += 1;
        TickOutput {
            frame: self.frame(),
            error,
        }
    }

    /// Applies one raw client message; returns the replies for that client.
    /// A reset also answers with the rest frame.
    pub fn handle_message(&mut self, text: &str) -> Vec<Message> {
        match crate::wire::parse_message(text) {
            Err(reply) => vec![Message::Error(reply)],
            Ok(msg) => self.apply(msg),
        }
    }

    pub fn apply(&mut self, msg: Message) -> Vec<Message> {
        let result = match msg {
            Message::Poke(p) => self.poke(&p).map(|_| Vec::new()),
            Message::Camera(c) => self.set_camera(&c).map(|_| Vec::new()),
            Message::Reset(_) => {
                self.reset();
                Ok(vec![Message::Frame(self.frame())])
            }
            other => {
                return vec![Message::Error(ErrorReply::new(
                    codes::UNEXPECTED_TYPE,
                    format!("viewers may not send \"{}\" messages", other.type_name()),
                ))]
            }
        };
        result.unwrap_or_else(|e| vec![Message::Error(ErrorReply::new(codes::INVALID_ARGUMENT, e.to_string()))])
    }

    pub fn set_camera(&mut self, c: &CameraEvent) -> Result<()> {
        let cam = Camera {
            rotation: c.extrinsics.rotation,
            translation: c.extrinsics.translation,
            ..self.settings.camera.clone()
        };
        cam.validate()?;
        self.settings.camera = cam;
        Ok(())
    }

    /// Picks the surface under the pointer and enqueues a poke. Returns the
    /// body index and picked nodes, or `None` when nothing was hit.
    pub fn poke(&mut self, ev: &PokeEvent) -> Result<Option<(usize, Vec<usize>)>> {
        if !ev.ndc_xy.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("poke coordinates must be finite"));
        }
        let sign = match ev.button {
            0 => 1.0,
            2 => -1.0,
            b => return Err(Error::invalid(format!("unsupported button {b} (0 pushes, 2 pulls)"))),
        };
        let cam = &self.settings.camera;
        let mut best: Option<(f64, usize, Vec3, Vec3)> = None;
        for (bi, b) in self.bodies.iter().enumerate() {
            let m = mvp(cam, &b.pose);
            let (origin, dir) = pick_ray(ev.ndc_xy, &m)?;
            let point = match ev.depth {
                Some(depth) => unproject(ev.ndc_xy, depth, &m)?,
                None => match raycast(origin, dir, &b.state.positions(), &b.mesh.surface_triangles) {
                    Some(hit) => hit.point,
                    None => continue,
                },
            };
            let w = b.pose.apply(point);
            let dist = (0..3).map(|k| (w[k] - cam.translation[k]).powi(2)).sum::<f64>().sqrt();
            if best.as_ref().is_none_or(|(d, ..)| dist < *d) {
                best = Some((dist, bi, point, dir));
            }
        }
        let Some((_, bi, point, ray_dir)) = best else {
            return Ok(None);
        };
        let poke = &self.settings.poke;
        let body = &mut self.bodies[bi];
        let radius = poke.radius.unwrap_or(0.75 * body.mean_edge);
        let picked = pick_nodes(point, &body.state, radius);
        let Some(&nearest) = picked.first() else {
            return Ok(None);
        };
        let dir = if poke.surface_normal {
            body.mesh.vertex_normals(&body.state.positions())[nearest].map(|c| -c)
        } else {
            ray_dir
        };
        match poke_force(&picked, point, dir.map(|c| sign * c), poke.magnitude, poke.duration) {
            Some(p) if p.is_active() => {
                body.pokes.push(p);
                Ok(Some((bi, picked)))
            }
            _ => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tignn_core::tignn::ModelConfig;

    fn beam_body(name: &str, pose: ModelPose) -> Body {
        let mesh = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 8, MaterialParams::beam()).unwrap();
        let mut model = TignnModel::new(ModelConfig { hidden: 4, k: 1 }, 3).unwrap();
        model.zero_heads();
        Body::new(name, mesh, model, Normalization::identity(), pose).unwrap()
    }

    fn settings() -> SceneSettings {
        SceneSettings {
            camera: Camera::look_at([5.0, -100.0, 20.0], [5.0, 5.0, 20.0], [0.0, 0.0, 1.0], 0.8, 1.0, 500.0).unwrap(),
            light: default_light(),
            material: PhongMaterial::default(),
            contact: None,
            tick_dt: 0.05,
            poke: PokeSettings::default(),
            scalar: ScalarField::SigmaXx,
            colormap_range: [-1.0, 1.0],
            realtime: false,
        }
    }

    #[test]
    fn zero_model_keeps_rest_frame() {
        let mut scene = Scene::new(vec![beam_body("a", ModelPose::default())], settings()).unwrap();
        let rest = scene.frame();
        let out = scene.tick();
        assert!(out.error.is_none());
        assert_eq!(out.frame.bodies, rest.bodies);
        assert_eq!(out.frame.tick, 1);
        assert_eq!(out.frame.time, 0.05);
    }

    #[test]
    fn centre_poke_hits_the_front_face() {
        let mut scene = Scene::new(vec![beam_body("a", ModelPose::default())], settings()).unwrap();
        let (b, nodes) = scene.poke(&PokeEvent::new([0.0, 0.0], 0)).unwrap().unwrap();
        assert_eq!(b, 0);
        let p = &scene.bodies[0].pokes[0];
        assert_eq!(p.node_ids, nodes);
        for &i in &nodes {
            assert_eq!(scene.bodies[0].mesh.rest_positions[i][1], 0.0);
        }
        // pushed along +y, into the beam
        assert!(p.force[1] > 0.0);
        assert!(scene.poke(&PokeEvent::new([0.99, 0.99], 0)).unwrap().is_none());
    }

    #[test]
    fn unknown_type_keeps_session_alive() {
        let mut scene = Scene::new(vec![beam_body("a", ModelPose::default())], settings()).unwrap();
        let r = scene.handle_message(r#"{"type":"zap","schema":"wire/1"}"#);
        assert!(matches!(&r[..], [Message::Error(e)] if e.code == codes::UNKNOWN_TYPE));
        let r = scene.handle_message(r#"{"type":"reset","schema":"wire/1"}"#);
        assert!(matches!(&r[..], [Message::Frame(_)]));
    }
}
