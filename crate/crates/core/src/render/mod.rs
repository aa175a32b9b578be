//! Model/view/projection transforms, Phong shading, the stress colormap and
//! depth compositing.

mod raster;

pub use raster::{ndc_to_pixel, render_points, Image, RenderBody, RenderOptions};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Placement of a body in the world: `x_world = T R S x_model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPose {
    pub translation: Vec3,
    /// Row-major orthonormal rotation.
    pub rotation: [[f64; 3]; 3],
    pub scale: Vec3,
}

impl Default for ModelPose {
    fn default() -> Self {
        ModelPose {
            translation: [0.0; 3],
            rotation: IDENTITY3,
            scale: [1.0; 3],
        }
    }
}

pub const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat3(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

fn check_rotation(r: &[[f64; 3]; 3], what: &str) -> Result<()> {
    let m = mat3(r);
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if !(err <= 1e-9) || !(m.determinant() > 0.0) {
        return Err(Error::invalid(format!("{what} rotation is not orthonormal (error {err:e})")));
    }
    Ok(())
}

/// Rotation by `angle` radians about a unit `axis` (Rodrigues).
pub fn axis_angle(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|c| c / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

impl ModelPose {
    pub fn validate(&self) -> Result<()> {
        check_rotation(&self.rotation, "model")?;
        if self.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("model pose needs finite translation and positive scale"));
        }
        Ok(())
    }

    /// Applies the pose to a model-space point.
    pub fn apply(&self, x: Vec3) -> Vec3 {
        let r = &self.rotation;
        let s = [x[0] * self.scale[0], x[1] * self.scale[1], x[2] * self.scale[2]];
        std::array::from_fn(|i| r[i][0] * s[0] + r[i][1] * s[1] + r[i][2] * s[2] + self.translation[i])
    }

    /// World-space vector expressed in the body frame (rotation only).
    pub fn to_body_vector(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        std::array::from_fn(|j| r[0][j] * v[0] + r[1][j] * v[1] + r[2][j] * v[2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Vertical field of view, radians.
    pub fov: f64,
    pub z_near: f64,
    pub z_far: f64,
    /// Camera-to-world rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// Camera position in the world.
    pub translation: Vec3,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            fov: std::f64::consts::FRAC_PI_2,
            z_near: 1.0,
            z_far: 1000.0,
            rotation: IDENTITY3,
            translation: [0.0, 0.0, 100.0],
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::invalid(format!("field of view must lie in (0, pi), got {}", self.fov)));
        }
        if !(self.z_near > 0.0 && self.z_near < self.z_far && self.z_far.is_finite()) {
            return Err(Error::invalid(format!(
                "clip planes need 0 < near < far, got {} and {}",
                self.z_near, self.z_far
            )));
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("camera translation must be finite"));
        }
        check_rotation(&self.rotation, "camera")
    }

    /// Camera at `eye` looking at `target`, with `up` roughly vertical on screen.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov: f64, z_near: f64, z_far: f64) -> Result<Camera> {
        let e = Vector3::from(eye);
        let back = e - Vector3::from(target);
        if back.norm() == 0.0 {
            return Err(Error::invalid("camera eye and target coincide"));
        }
        let z = back.normalize();
        let x = Vector3::from(up).cross(&z);
        if x.norm() < 1e-12 {
            return Err(Error::invalid("camera up vector is parallel to the viewing direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]];
        let cam = Camera {
            fov,
            z_near,
            z_far,
            rotation,
            translation: eye,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// `T R S` as a homogeneous matrix.
pub fn model_matrix(pose: &ModelPose) -> Matrix4<f64> {
    let r = &pose.rotation;
    let s = pose.scale;
    let t = pose.translation;
    Matrix4::new(
        r[0][0] * s[0], r[0][1] * s[1], r[0][2] * s[2], t[0],
        r[1][0] * s[0], r[1][1] * s[1], r[1][2] * s[2], t[1],
        r[2][0] * s[0], r[2][1] * s[1], r[2][2] * s[2], t[2],
        0.0, 0.0, 0.0, 1.0,
    )
}

/// The camera extrinsics `T_v R_v` (camera to world).
pub fn pose_matrix(cam: &Camera) -> Matrix4<f64> {
    model_matrix(&ModelPose {
        translation: cam.translation,
        rotation: cam.rotation,
        scale: [1.0; 3],
    })
}

/// `(T_v R_v)^-1` in closed form: rotation `R^T`, translation `-R^T t`.
pub fn view_matrix(cam: &Camera) -> Matrix4<f64> {
    let r = &cam.rotation;
    let t = cam.translation;
    let rt = |i: usize, j: usize| r[j][i];
    let tr = |i: usize| -(rt(i, 0) * t[0] + rt(i, 1) * t[1] + rt(i, 2) * t[2]);
    Matrix4::new(
        rt(0, 0), rt(0, 1), rt(0, 2), tr(0),
        rt(1, 0), rt(1, 1), rt(1, 2), tr(1),
        rt(2, 0), rt(2, 1), rt(2, 2), tr(2),
        0.0, 0.0, 0.0, 1.0,
    )
}

/// `cot(fov / 2)` via `(1 + cos a) / sin a`, which is exactly 1 at `a = pi/2`.
fn half_angle_cot(fov: f64) -> f64 {
    (1.0 + fov.cos()) / fov.sin()
}

/// Symmetric perspective frustum with a square aspect ratio.
pub fn projection_matrix(cam: &Camera) -> Matrix4<f64> {
    let c = half_angle_cot(cam.fov);
    let (n, f) = (cam.z_near, cam.z_far);
    Matrix4::new(
        c, 0.0, 0.0, 0.0,
        0.0, c, 0.0, 0.0,
        0.0, 0.0, -(f + n) / (f - n), -2.0 * f * n / (f - n),
        0.0, 0.0, -1.0, 0.0,
    )
}

pub fn mvp(cam: &Camera, pose: &ModelPose) -> Matrix4<f64> {
    projection_matrix(cam) * (view_matrix(cam) * model_matrix(pose))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub clip: [f64; 4],
    pub ndc: Vec3,
}

pub fn project(mvp: &Matrix4<f64>, x: Vec3) -> Result<Projected> {
    let c = mvp * Vector4::new(x[0], x[1], x[2], 1.0);
    if !(c[3].abs() >= 1e-12) {
        return Err(Error::PointAtCameraPlane { w: c[3] });
    }
    Ok(Projected {
        clip: [c[0], c[1], c[2], c[3]],
        ndc: [c[0] / c[3], c[1] / c[3], c[2] / c[3]],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhongMaterial {
    pub ka: f64,
    pub kd: f64,
    pub ks: f64,
    /// Shininess exponent.
    pub beta: f64,
    pub ia: Vec3,
    pub id: Vec3,
    pub is: Vec3,
}

impl Default for PhongMaterial {
    fn default() -> Self {
        PhongMaterial {
            ka: 0.35,
            kd: 0.6,
            ks: 0.25,
            beta: 16.0,
            ia: [1.0; 3],
            id: [1.0; 3],
            is: [1.0; 3],
        }
    }
}

impl PhongMaterial {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let ok = [self.ka, self.kd, self.ks].into_iter().all(unit)
            && self.beta >= 1.0
            && self.ia.iter().chain(&self.id).chain(&self.is).all(|&x| unit(x));
        if !ok {
            return Err(Error::invalid("Phong constants must lie in [0, 1] with shininess >= 1"));
        }
        Ok(())
    }
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Ambient + diffuse + specular intensity. `l` points from the surface to the
/// light and `view` from the surface to the eye.
pub fn phong(mat: &PhongMaterial, n: Vec3, l: Vec3, view: Vec3) -> Vec3 {
    let ln = dot(l, n);
    let r: Vec3 = std::array::from_fn(|i| 2.0 * ln * n[i] - l[i]);
    let diffuse = ln.max(0.0);
    let specular = dot(r, view).max(0.0).powf(mat.beta);
    std::array::from_fn(|i| {
        (mat.ka * mat.ia[i] + mat.kd * diffuse * mat.id[i] + mat.ks * specular * mat.is[i]).clamp(0.0, 1.0)
    })
}

/// Colormap stops at `u = 0, 0.25, 0.5, 0.75, 1`.
pub const COLORMAP_STOPS: [Vec3; 5] = [
    [0.267, 0.005, 0.329],
    [0.229, 0.322, 0.546],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
];

pub fn colormap(value: f64, lo: f64, hi: f64) -> Vec3 {
    let u = if hi > lo { ((value.clamp(lo, hi) - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    let u = if u.is_nan() { 0.0 } else { u };
    let x = u * 4.0;
    let k = (x.floor() as usize).min(3);
    let f = x - k as f64;
    if f == 0.0 {
        return COLORMAP_STOPS[k];
    }
    let (a, b) = (COLORMAP_STOPS[k], COLORMAP_STOPS[k + 1]);
    std::array::from_fn(|i| a[i] + f * (b[i] - a[i]))
}

/// Row-major scalar grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

/// Pixels where the virtual surface is strictly closer than the real one.
pub fn depth_mask(virtual_depth: &Grid<f64>, real_depth: &Grid<f64>) -> Result<Grid<bool>> {
    if virtual_depth.width != real_depth.width
        || virtual_depth.height != real_depth.height
        || virtual_depth.data.len() != real_depth.data.len()
    {
        return Err(Error::invalid(format!(
            "depth grids differ in shape: {}x{} vs {}x{}",
            virtual_depth.width, virtual_depth.height, real_depth.width, real_depth.height
        )));
    }
    Ok(Grid {
        width: virtual_depth.width,
        height: virtual_depth.height,
        data: virtual_depth.data.iter().zip(&real_depth.data).map(|(v, r)| v < r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_ends_and_midpoints() {
        assert_eq!(colormap(-3.0, -3.0, 5.0), COLORMAP_STOPS[0]);
        assert_eq!(colormap(5.0, -3.0, 5.0), COLORMAP_STOPS[4]);
        assert_eq!(colormap(99.0, 0.0, 1.0), COLORMAP_STOPS[4]);
        let c = colormap(0.125, 0.0, 1.0);
        for i in 0..3 {
            let mid = 0.5 * (COLORMAP_STOPS[0][i] + COLORMAP_STOPS[1][i]);
            assert!((c[i] - mid).abs() < 1e-15);
        }
        assert_eq!(colormap(0.5, 0.0, 1.0), COLORMAP_STOPS[2]);
    }

    #[test]
    fn depth_ties_favor_real() {
        let v = Grid::filled(2, 1, 2.0);
        let mut r = Grid::filled(2, 1, 2.0);
        assert_eq!(depth_mask(&v, &r).unwrap().data, vec![false, false]);
        r.data[1] = 3.0;
        assert_eq!(depth_mask(&v, &r).unwrap().data, vec![false, true]);
        let inf = Grid::filled(2, 1, f64::INFINITY);
        assert_eq!(depth_mask(&v, &inf).unwrap().data, vec![true, true]);
        assert!(depth_mask(&v, &Grid::filled(1, 2, 0.0)).is_err());
    }

    #[test]
    fn look_at_points_down_negative_z() {
        let cam = Camera::look_at([0.0, 0.0, 5.0], [0.0; 3], [0.0, 1.0, 0.0], 1.0, 1.0, 10.0).unwrap();
        assert_eq!(cam.rotation, IDENTITY3);
        let v = view_matrix(&cam) * Vector4::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!([v[0], v[1], v[2]], [0.0, 0.0, -5.0]);
    }
}
