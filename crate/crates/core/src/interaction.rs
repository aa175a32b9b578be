//! Pointer picking, prescribed pokes and penalty contact between bodies.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Vec3;
use crate::state::StateField;

/// Model-space point under NDC `(x, y)` at NDC depth `depth`.
pub fn unproject(ndc_xy: [f64; 2], depth: f64, mvp: &Matrix4<f64>) -> Result<Vec3> {
    let inv = mvp.try_inverse().ok_or(Error::SingularMatrix)?;
    let h = inv * Vector4::new(ndc_xy[0], ndc_xy[1], depth, 1.0);
    if !(h[3].abs() >= 1e-12) {
        return Err(Error::PointAtCameraPlane { w: h[3] });
    }
    Ok([h[0] / h[3], h[1] / h[3], h[2] / h[3]])
}

/// Model-space ray through an NDC position: origin on the near plane, unit
/// direction towards the far plane.
pub fn pick_ray(ndc_xy: [f64; 2], mvp: &Matrix4<f64>) -> Result<(Vec3, Vec3)> {
    let a = unproject(ndc_xy, -1.0, mvp)?;
    let b = unproject(ndc_xy, 1.0, mvp)?;
    let d = sub(b, a);
    let n = norm(d);
    if !(n > 0.0) {
        return Err(Error::invalid("degenerate pick ray"));
    }
    Ok((a, d.map(|c| c / n)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Distance along the ray.
    pub t: f64,
    pub point: Vec3,
    pub triangle: usize,
}

/// Nearest intersection of a ray with a triangle soup (Moller-Trumbore, both sides).
pub fn raycast(origin: Vec3, dir: Vec3, positions: &[Vec3], triangles: &[[usize; 3]]) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for (k, tri) in triangles.iter().enumerate() {
        let (p0, p1, p2) = (positions[tri[0]], positions[tri[1]], positions[tri[2]]);
        let e1 = sub(p1, p0);
        let e2 = sub(p2, p0);
        let p = cross(dir, e2);
        let det = dot(e1, p);
        if det.abs() < 1e-14 {
            continue;
        }
        let inv = 1.0 / det;
        let s = sub(origin, p0);
        let u = dot(s, p) * inv;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let q = cross(s, e1);
        let v = dot(dir, q) * inv;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        let t = dot(e2, q) * inv;
        if t > 0.0 && best.is_none_or(|b| t < b.t) {
            best = Some(RayHit {
                t,
                point: std::array::from_fn(|i| origin[i] + t * dir[i]),
                triangle: k,
            });
        }
    }
    best
}

/// Nodes strictly within `eps` of `point`, nearest first, ties by lower id.
pub fn pick_nodes(point: Vec3, state: &StateField, eps: f64) -> Vec<usize> {
    let mut hits: Vec<(f64, usize)> = state
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (norm(sub(n.q, point)), i))
        .filter(|(d, _)| *d < eps)
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.into_iter().map(|(_, i)| i).collect()
}

/// A prescribed force shared equally by the picked nodes for a number of steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poke {
    pub model_point: Vec3,
    pub node_ids: Vec<usize>,
    /// Total force over all picked nodes.
    pub force: Vec3,
    pub remaining_steps: usize,
}

impl Poke {
    pub fn is_active(&self) -> bool {
        self.remaining_steps > 0 && !self.node_ids.is_empty()
    }

    /// Adds this poke's per-node share into `forces`.
    pub fn accumulate(&self, forces: &mut [Vec3]) {
        if !self.is_active() {
            return;
        }
        let share = self.force.map(|c| c / self.node_ids.len() as f64);
        for &i in &self.node_ids {
            for k in 0..3 {
                forces[i][k] += share[k];
            }
        }
    }

    /// Consumes one step; returns whether the poke is still active.
    pub fn advance(&mut self) -> bool {
        self.remaining_steps = self.remaining_steps.saturating_sub(1);
        self.is_active()
    }
}

/// `None` when nothing was picked: a no-op rather than an error.
pub fn poke_force(picked: &[usize], model_point: Vec3, direction: Vec3, magnitude: f64, duration: usize) -> Option<Poke> {
    if picked.is_empty() {
        return None;
    }
    Some(Poke {
        model_point,
        node_ids: picked.to_vec(),
        force: direction.map(|c| c * magnitude),
        remaining_steps: duration,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactConfig {
    /// Activation distance.
    pub eps: f64,
    pub stiffness: f64,
}

impl ContactConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite() && self.stiffness > 0.0 && self.stiffness.is_finite()) {
            return Err(Error::invalid("contact distance and stiffness must be positive"));
        }
        Ok(())
    }
}

/// Below this separation the rest-configuration direction is used.
const COINCIDENT: f64 = 1e-9;
/// Pair forces are rounded to a grid of this many bits below the largest
/// possible magnitude, which makes every accumulation exact.
const GRID_BITS: i32 = 40;

/// Penalty forces between two bodies given world-space positions (current and
/// rest). Each pair closer than `eps` pushes apart with `k (eps - d)`. Pair
/// forces are snapped to a fixed binary grid so the per-node sums are exact and
/// the total over both bodies is exactly zero.
pub fn contact_forces(
    a: &[Vec3],
    b: &[Vec3],
    rest_a: &[Vec3],
    rest_b: &[Vec3],
    cfg: &ContactConfig,
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    cfg.validate()?;
    if a.len() != rest_a.len() || b.len() != rest_b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len(), b.len()],
            actual: vec![rest_a.len(), rest_b.len()],
        });
    }
    let mut fa = vec![[0.0; 3]; a.len()];
    let mut fb = vec![[0.0; 3]; b.len()];
    let (lo_b, hi_b) = bounds(b);
    let quantum = (2.0f64).powi((cfg.stiffness * cfg.eps).log2().ceil() as i32 - GRID_BITS);
    for (i, &qa) in a.iter().enumerate() {
        if (0..3).any(|k| qa[k] < lo_b[k] - cfg.eps || qa[k] > hi_b[k] + cfg.eps) {
            continue;
        }
        for (j, &qb) in b.iter().enumerate() {
            let r = sub(qa, qb);
            let d = norm(r);
            if !(d < cfg.eps) {
                continue;
            }
            let dir = if d < COINCIDENT {
                let r0 = sub(rest_a[i], rest_b[j]);
                let n0 = norm(r0);
                if n0 == 0.0 {
                    continue;
                }
                r0.map(|c| c / n0)
            } else {
                r.map(|c| c / d)
            };
            let mag = cfg.stiffness * (cfg.eps - d);
            let f = dir.map(|c| (c * mag / quantum).round() * quantum);
            for k in 0..3 {
                fa[i][k] += f[k];
                fb[j][k] -= f[k];
            }
        }
    }
    Ok((fa, fb))
}

fn bounds(x: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in x {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::NodeState;

    fn field(points: &[Vec3]) -> StateField {
        StateField {
            nodes: points.iter().map(|&q| NodeState::at_rest(q)).collect(),
            time: 0.0,
        }
    }

    #[test]
    fn picking_is_strict_and_tie_broken_by_id() {
        let s = field(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 3.0, 0.0]]);
        assert_eq!(pick_nodes([0.0; 3], &s, 1.0), vec![2]);
        assert_eq!(pick_nodes([0.0; 3], &s, 1.5), vec![2, 0, 1]);
        assert!(pick_nodes([0.0, 10.0, 0.0], &s, 1.0).is_empty());
    }

    #[test]
    fn poke_shares_and_expires() {
        assert!(poke_force(&[], [0.0; 3], [1.0, 0.0, 0.0], 10.0, 5).is_none());
        let p = poke_force(&[0, 2], [0.0; 3], [0.0, 1.0, 0.0], 10.0, 1).unwrap();
        let mut f = vec![[0.0; 3]; 3];
        p.accumulate(&mut f);
        assert_eq!(f, vec![[0.0, 5.0, 0.0], [0.0; 3], [0.0, 5.0, 0.0]]);
        let mut p = p;
        assert!(!p.advance());
        let mut g = vec![[0.0; 3]; 3];
        p.accumulate(&mut g);
        assert_eq!(g, vec![[0.0; 3]; 3]);
        let dead = poke_force(&[1], [0.0; 3], [1.0, 0.0, 0.0], 10.0, 0).unwrap();
        assert!(!dead.is_active());
    }

    #[test]
    fn single_pair_at_half_eps() {
        let cfg = ContactConfig { eps: 1.0, stiffness: 8.0 };
        let a = [[0.0, 0.0, 0.5]];
        let b = [[0.0, 0.0, 0.0]];
        let (fa, fb) = contact_forces(&a, &b, &a, &b, &cfg).unwrap();
        assert_eq!(fa[0], [0.0, 0.0, 4.0]);
        assert_eq!(fb[0], [0.0, 0.0, -4.0]);
        let far = [[0.0, 0.0, 1.0]];
        let (fa, _) = contact_forces(&far, &b, &far, &b, &cfg).unwrap();
        assert_eq!(fa[0], [0.0; 3]);
    }

    #[test]
    fn coincident_nodes_use_rest_direction() {
        let cfg = ContactConfig { eps: 1.0, stiffness: 1.0 };
        let (fa, fb) = contact_forces(&[[0.0; 3]], &[[0.0; 3]], &[[2.0, 0.0, 0.0]], &[[0.0; 3]], &cfg).unwrap();
        assert_eq!(fa[0], [1.0, 0.0, 0.0]);
        assert_eq!(fb[0], [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn ray_hits_nearest_face() {
        let p = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, -1.0], [0.0, 1.0, -1.0]];
        let tris = [[3, 4, 5], [0, 1, 2]];
        let hit = raycast([0.2, 0.2, 5.0], [0.0, 0.0, -1.0], &p, &tris).unwrap();
        assert_eq!(hit.triangle, 1);
        assert!((hit.t - 5.0).abs() < 1e-12);
        assert!(raycast([2.0, 2.0, 5.0], [0.0, 0.0, -1.0], &p, &tris).is_none());
    }
}
