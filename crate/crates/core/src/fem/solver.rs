//! Explicit central-difference dynamics with a lumped mass matrix.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::element::ElementGeometry;
use super::material::{cauchy_from_pk2, from_voigt, pk2_split, strain_energy, to_voigt, MaterialParams};
use super::prony::{prony_update, Voigt};
use crate::error::{Error, Result};
use crate::mesh::{norm, sub, SolidMesh};
use crate::state::{LoadCase, NodeState, StateField, Trajectory};

/// Safety factor applied to the critical time step.
pub const STABILITY_SAFETY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Inner steps per snapshot interval; `None` picks the smallest stable count.
    #[serde(default)]
    pub substeps: Option<usize>,
    /// Stiffness-proportional damping coefficient (s). Damps the high
    /// frequencies an explicit scheme would otherwise alias into the snapshots.
    #[serde(default)]
    pub stiffness_damping: f64,
    /// Hourglass stiffness coefficient for single-point hexahedra.
    #[serde(default)]
    pub hourglass: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            substeps: None,
            stiffness_damping: 1e-2,
            hourglass: 0.1,
        }
    }
}

impl SolverOptions {
    /// No damping and no automatic stepping changes: used for energy audits.
    pub fn undamped() -> Self {
        SolverOptions {
            substeps: None,
            stiffness_damping: 0.0,
            hourglass: 0.1,
        }
    }
}

/// Conservative CFL estimate: `0.5 * min_e (shortest edge of e) / c_dilatational`.
pub fn stability_dt(mesh: &SolidMesh, mat: &MaterialParams) -> f64 {
    let c = mat.wave_speed();
    let mut h_min = f64::INFINITY;
    for el in mesh.elements() {
        for &(a, b) in mesh.kind.local_edges() {
            let d = norm(sub(mesh.rest_positions[el[a]], mesh.rest_positions[el[b]]));
            h_min = h_min.min(d);
        }
    }
    STABILITY_SAFETY * h_min / c
}

/// Stability bound reduced for stiffness-proportional damping,
/// `dt <= (2 / w) (sqrt(1 + z^2) - z)` with `z = beta w / 2` at the highest frequency.
pub fn damped_stability_dt(mesh: &SolidMesh, mat: &MaterialParams, opts: &SolverOptions) -> f64 {
    let bound = stability_dt(mesh, mat);
    let omega_max = 2.0 * STABILITY_SAFETY / bound;
    let zeta = 0.5 * opts.stiffness_damping * omega_max;
    bound * ((1.0 + zeta * zeta).sqrt() - zeta)
}

/// Mutable state of a running finite-element simulation.
pub struct Simulation<'a> {
    mesh: &'a SolidMesh,
    mat: &'a MaterialParams,
    opts: SolverOptions,
    geometry: Vec<ElementGeometry>,
    hourglass_stiffness: Vec<f64>,
    mass: Vec<f64>,
    pub x: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    accel: Vec<[f64; 3]>,
    s_iso_old: Vec<Voigt>,
    history: Vec<Vec<Voigt>>,
    element_cauchy: Vec<Voigt>,
    external: Vec<[f64; 3]>,
}

impl<'a> Simulation<'a> {
    pub fn new(mesh: &'a SolidMesh, mat: &'a MaterialParams, opts: SolverOptions) -> Result<Self> {
        mat.validate()?;
        let n = mesh.n_nodes();
        let mut geometry = Vec::with_capacity(mesh.n_elements());
        let mut mass = vec![0.0; n];
        let mut hourglass_stiffness = Vec::with_capacity(mesh.n_elements());
        let npe = mesh.kind.nodes_per_element() as f64;
        for (e, el) in mesh.elements().enumerate() {
            let rest: Vec<[f64; 3]> = el.iter().map(|&i| mesh.rest_positions[i]).collect();
            let geo = ElementGeometry::new(mesh.kind, &rest).map_err(|err| match err {
                Error::DegenerateElement { .. } => Error::DegenerateElement { element: e },
                other => other,
            })?;
            for &i in el {
                mass[i] += mat.density * geo.volume / npe;
            }
            hourglass_stiffness.push(opts.hourglass * mat.shear_modulus() * geo.volume.cbrt() / 8.0);
            geometry.push(geo);
        }
        let n_terms = mat.prony.len();
        let ne = mesh.n_elements();
        let mut sim = Simulation {
            mesh,
            mat,
            opts,
            geometry,
            hourglass_stiffness,
            mass,
            x: mesh.rest_positions.clone(),
            v: vec![[0.0; 3]; n],
            accel: vec![[0.0; 3]; n],
            s_iso_old: vec![[0.0; 6]; ne],
            history: vec![vec![[0.0; 6]; n_terms]; ne],
            element_cauchy: vec![[0.0; 6]; ne],
            external: vec![[0.0; 3]; n],
        };
        sim.accel = sim.acceleration(0.0)?;
        Ok(sim)
    }

    pub fn set_velocity(&mut self, v: Vec<[f64; 3]>) -> Result<()> {
        self.v = v;
        for &i in &self.mesh.fixed_nodes {
            self.v[i] = [0.0; 3];
        }
        self.accel = self.acceleration(0.0)?;
        Ok(())
    }

    /// Replaces the nodal loads; the stored acceleration is corrected so the
    /// next half-kick already sees them.
    pub fn set_external(&mut self, f: Vec<[f64; 3]>) {
        for (i, (new, old)) in f.iter().zip(&self.external).enumerate() {
            if !self.mesh.is_fixed(i) {
                for r in 0..3 {
                    self.accel[i][r] += (new[r] - old[r]) / self.mass[i];
                }
            }
        }
        self.external = f;
    }

    /// Acceleration at the current `(x, v)`, advancing the viscoelastic
    /// history by `dt` (0 for a re-evaluation without elapsed time).
    fn acceleration(&mut self, dt: f64) -> Result<Vec<[f64; 3]>> {
        let mesh = self.mesh;
        let mat = self.mat;
        let beta = self.opts.stiffness_damping;
        let mu = mat.shear_modulus();
        let kappa = mat.bulk_modulus();
        let mut force: Vec<[f64; 3]> = self.external.clone();
        let mut xe = [[0.0; 3]; 8];
        let mut ve = [[0.0; 3]; 8];
        for (e, el) in mesh.elements().enumerate() {
            let geo = &self.geometry[e];
            let npe = el.len();
            for (k, &i) in el.iter().enumerate() {
                xe[k] = self.x[i];
                ve[k] = self.v[i];
            }
            let f = geo.deformation_gradient(&xe[..npe]);
            let split = pk2_split(&f, mat).map_err(|err| match err {
                Error::InvertedElement { det_f, .. } => Error::InvertedElement {
                    element: Some(e),
                    det_f,
                    step: None,
                },
                other => other,
            })?;
            let s_iso = to_voigt(&split.isochoric);
            let update = prony_update(&s_iso, &self.s_iso_old[e], &self.history[e], dt, &mat.prony);
            self.s_iso_old[e] = s_iso;
            self.history[e] = update.history;
            let s_elastic = split.volumetric + from_voigt(&update.total_dev);
            self.element_cauchy[e] = to_voigt(&cauchy_from_pk2(&f, &s_elastic));

            let mut s = s_elastic;
            if beta > 0.0 {
                let fdot = geo.deformation_gradient(&ve[..npe]);
                let edot = (f.transpose() * fdot + fdot.transpose() * f) * 0.5;
                let tr = edot.trace();
                let dev = edot - Matrix3::identity() * (tr / 3.0);
                s += (dev * (2.0 * mu) + Matrix3::identity() * (kappa * tr)) * beta;
            }
            let p = f * s * geo.volume;
            for (k, &i) in el.iter().enumerate() {
                let b = geo.grads[k];
                for r in 0..3 {
                    force[i][r] -= p[(r, 0)] * b[0] + p[(r, 1)] * b[1] + p[(r, 2)] * b[2];
                }
            }
            if let Some(gammas) = &geo.hourglass {
                let kh = self.hourglass_stiffness[e];
                for gamma in gammas {
                    let mut q = [0.0; 3];
                    for k in 0..npe {
                        let u = sub(xe[k], mesh.rest_positions[el[k]]);
                        for r in 0..3 {
                            q[r] += gamma[k] * (u[r] + beta * ve[k][r]);
                        }
                    }
                    for (k, &i) in el.iter().enumerate() {
                        for r in 0..3 {
                            force[i][r] -= kh * gamma[k] * q[r];
                        }
                    }
                }
            }
        }
        for (i, fi) in force.iter_mut().enumerate() {
            if mesh.is_fixed(i) {
                *fi = [0.0; 3];
            } else {
                let m = self.mass[i];
                *fi = fi.map(|c| c / m);
            }
        }
        Ok(force)
    }

    /// One kick-drift-kick step (central difference).
    pub fn advance(&mut self, dt: f64) -> Result<()> {
        let n = self.x.len();
        for i in 0..n {
            for r in 0..3 {
                self.v[i][r] += 0.5 * dt * self.accel[i][r];
                self.x[i][r] += dt * self.v[i][r];
            }
        }
        self.accel = self.acceleration(dt)?;
        for i in 0..n {
            for r in 0..3 {
                self.v[i][r] += 0.5 * dt * self.accel[i][r];
            }
        }
        for &i in &self.mesh.fixed_nodes {
            self.x[i] = self.mesh.rest_positions[i];
            self.v[i] = [0.0; 3];
        }
        Ok(())
    }

    /// Nodal Cauchy stress: rest-volume-weighted average over adjacent elements.
    pub fn nodal_stress(&self) -> Vec<[f64; 6]> {
        let n = self.x.len();
        let mut acc = vec![[0.0; 6]; n];
        let mut weight = vec![0.0; n];
        for (e, el) in self.mesh.elements().enumerate() {
            let vol = self.geometry[e].volume;
            for &i in el {
                weight[i] += vol;
                for k in 0..6 {
                    acc[i][k] += vol * self.element_cauchy[e][k];
                }
            }
        }
        for (a, w) in acc.iter_mut().zip(&weight) {
            if *w > 0.0 {
                for c in a.iter_mut() {
                    *c /= w;
                }
            }
        }
        acc
    }

    pub fn snapshot(&self, time: f64) -> StateField {
        let sigma = self.nodal_stress();
        StateField {
            nodes: (0..self.x.len())
                .map(|i| NodeState {
                    q: self.x[i],
                    v: self.v[i],
                    sigma: sigma[i],
                })
                .collect(),
            time,
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.v
            .iter()
            .zip(&self.mass)
            .map(|(v, m)| 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum()
    }

    /// Hyperelastic plus hourglass energy at the current configuration.
    pub fn strain_energy(&self) -> f64 {
        let mut total = 0.0;
        let mut xe = [[0.0; 3]; 8];
        for (e, el) in self.mesh.elements().enumerate() {
            let geo = &self.geometry[e];
            for (k, &i) in el.iter().enumerate() {
                xe[k] = self.x[i];
            }
            let f = geo.deformation_gradient(&xe[..el.len()]);
            total += geo.volume * strain_energy(&f, self.mat);
            if let Some(gammas) = &geo.hourglass {
                for gamma in gammas {
                    let mut q = [0.0; 3];
                    for (k, &i) in el.iter().enumerate() {
                        let u = sub(xe[k], self.mesh.rest_positions[i]);
                        for r in 0..3 {
                            q[r] += gamma[k] * u[r];
                        }
                    }
                    total += 0.5 * self.hourglass_stiffness[e] * (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
                }
            }
        }
        total
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.mass
    }
}

/// Number of inner steps per snapshot interval and the inner step size.
pub fn inner_steps(mesh: &SolidMesh, mat: &MaterialParams, dt: f64, opts: &SolverOptions) -> Result<(usize, f64)> {
    let bound = damped_stability_dt(mesh, mat, opts);
    match opts.substeps {
        Some(0) => Err(Error::invalid("substeps must be at least 1")),
        Some(n) => {
            let h = dt / n as f64;
            if h > bound {
                Err(Error::StepTooLarge { dt: h, bound })
            } else {
                Ok((n, h))
            }
        }
        None => {
            let n = (dt / bound).ceil().max(1.0) as usize;
            Ok((n, dt / n as f64))
        }
    }
}

/// Runs `nt` snapshot intervals of length `dt` from the rest state.
pub fn simulate(
    mesh: &SolidMesh,
    load: &LoadCase,
    nt: usize,
    dt: f64,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    if nt == 0 {
        return Err(Error::invalid("nt must be at least 1"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if mesh.fixed_nodes.is_empty() {
        return Err(Error::invalid("dynamic simulation needs at least one fixed node"));
    }
    load.validate(mesh.n_nodes(), &mesh.fixed_nodes)?;
    let mat = &mesh.material;
    let (n_inner, h) = inner_steps(mesh, mat, dt, opts)?;
    let mut sim = Simulation::new(mesh, mat, opts.clone())?;
    let mut snapshots = Vec::with_capacity(nt + 1);
    snapshots.push(StateField::rest(&mesh.rest_positions));
    for step in 0..nt {
        sim.set_external(load.nodal_forces(mesh.n_nodes(), step));
        for _ in 0..n_inner {
            sim.advance(h).map_err(|err| match err {
                Error::InvertedElement { element, det_f, .. } => Error::InvertedElement {
                    element,
                    det_f,
                    step: Some(step),
                },
                other => other,
            })?;
        }
        snapshots.push(sim.snapshot((step + 1) as f64 * dt));
    }
    Ok(Trajectory {
        load: load.clone(),
        dt,
        snapshots,
    })
}
