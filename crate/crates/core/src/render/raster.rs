//! Software point/wire renderer writing binary PPM.

use std::path::Path;

use super::{colormap, mvp, phong, project, Camera, ModelPose, PhongMaterial, Vec3};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, top row first.
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, background: [u8; 3]) -> Self {
        Image {
            width,
            height,
            rgb: background.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, self.to_ppm())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    pub background: [u8; 3],
    /// Vertex disk radius in pixels.
    pub point_radius: usize,
    /// Unit world-space direction towards the light.
    pub light: Vec3,
    pub material: PhongMaterial,
    /// Colormap range of the scalar field.
    pub range: (f64, f64),
    pub wireframe: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width: 320,
            height: 320,
            background: [255, 255, 255],
            point_radius: 2,
            light: normalize([0.3, 0.5, 1.0]),
            material: PhongMaterial::default(),
            range: (-1.0, 1.0),
            wireframe: true,
        }
    }
}

/// One body to draw: deformed model-space positions, surface triangles and a
/// scalar per vertex.
pub struct RenderBody<'a> {
    pub pose: &'a ModelPose,
    pub positions: &'a [Vec3],
    pub triangles: &'a [[usize; 3]],
    pub normals: &'a [Vec3],
    pub values: &'a [f64],
}

fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        v
    } else {
        v.map(|c| c / n)
    }
}

/// NDC `(x, y)` to pixel coordinates in a centred square viewport.
pub fn ndc_to_pixel(ndc: [f64; 2], width: usize, height: usize) -> [f64; 2] {
    let side = width.min(height) as f64;
    let (ox, oy) = ((width as f64 - side) / 2.0, (height as f64 - side) / 2.0);
    [ox + (ndc[0] + 1.0) * 0.5 * side, oy + (1.0 - ndc[1]) * 0.5 * side]
}

struct Target {
    img: Image,
    depth: Vec<f64>,
}

impl Target {
    fn plot(&mut self, x: i64, y: i64, z: f64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.img.width as i64 || y >= self.img.height as i64 {
            return;
        }
        let i = y as usize * self.img.width + x as usize;
        if z < self.depth[i] {
            self.depth[i] = z;
            self.img.rgb[3 * i..3 * i + 3].copy_from_slice(&c);
        }
    }
}

fn to_u8(c: Vec3) -> [u8; 3] {
    c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Projects every vertex, shades it with Phong times the colormap and draws
/// depth-tested surface edges and vertex disks.
pub fn render_points(cam: &Camera, bodies: &[RenderBody<'_>], opts: &RenderOptions) -> Result<Image> {
    cam.validate()?;
    let mut target = Target {
        img: Image::new(opts.width, opts.height, opts.background),
        depth: vec![f64::INFINITY; opts.width * opts.height],
    };
    for body in bodies {
        let m = mvp(cam, body.pose);
        let mut screen: Vec<Option<(f64, f64, f64)>> = Vec::with_capacity(body.positions.len());
        let mut colors = Vec::with_capacity(body.positions.len());
        for (i, &x) in body.positions.iter().enumerate() {
            let p = project(&m, x).ok().filter(|p| p.clip[3] > 0.0 && p.ndc[2].abs() <= 1.0);
            screen.push(p.map(|p| {
                let [px, py] = ndc_to_pixel([p.ndc[0], p.ndc[1]], opts.width, opts.height);
                (px, py, p.ndc[2])
            }));
            let world = body.pose.apply(x);
            let n = normalize(rotate(body.pose, body.normals.get(i).copied().unwrap_or([0.0, 0.0, 1.0])));
            let view = normalize(std::array::from_fn(|k| cam.translation[k] - world[k]));
            let shade = phong(&opts.material, n, opts.light, view);
            let base = colormap(body.values.get(i).copied().unwrap_or(0.0), opts.range.0, opts.range.1);
            colors.push(to_u8(std::array::from_fn(|k| base[k] * shade[k])));
        }
        if opts.wireframe {
            for tri in body.triangles {
                for e in 0..3 {
                    let (a, b) = (tri[e], tri[(e + 1) % 3]);
                    if let (Some(pa), Some(pb)) = (screen[a], screen[b]) {
                        line(&mut target, pa, pb, colors[a], colors[b]);
                    }
                }
            }
        }
        let r = opts.point_radius as i64;
        for (i, s) in screen.iter().enumerate() {
            let Some((px, py, z)) = *s else { continue };
            let (cx, cy) = (px.floor() as i64, py.floor() as i64);
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy <= r * r {
                        target.plot(cx + dx, cy + dy, z, colors[i]);
                    }
                }
            }
        }
    }
    Ok(target.img)
}

fn rotate(pose: &ModelPose, v: Vec3) -> Vec3 {
    let r = &pose.rotation;
    std::array::from_fn(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
}

fn line(t: &mut Target, a: (f64, f64, f64), b: (f64, f64, f64), ca: [u8; 3], cb: [u8; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).clamp(1, 4096);
    for s in 0..=steps {
        let f = s as f64 / steps as f64;
        let x = a.0 + f * (b.0 - a.0);
        let y = a.1 + f * (b.1 - a.1);
        // nudged behind the vertex disks so points stay on top
        let z = a.2 + f * (b.2 - a.2) + 1e-9;
        let c = if f < 0.5 { ca } else { cb };
        let c = c.map(|v| (v as f64 * 0.8).round() as u8);
        t.plot(x.floor() as i64, y.floor() as i64, z, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_maps_to_viewport_centre() {
        assert_eq!(ndc_to_pixel([0.0, 0.0], 200, 100), [100.0, 50.0]);
        assert_eq!(ndc_to_pixel([-1.0, 1.0], 100, 100), [0.0, 0.0]);
    }

    #[test]
    fn ppm_header() {
        let img = Image::new(2, 1, [1, 2, 3]);
        assert_eq!(img.to_ppm(), b"P6\n2 1\n255\n\x01\x02\x03\x01\x02\x03".to_vec());
    }

    #[test]
    fn single_point_lands_at_centre() {
        let cam = Camera::look_at([0.0, 0.0, 5.0], [0.0; 3], [0.0, 1.0, 0.0], 1.0, 1.0, 10.0).unwrap();
        let pose = ModelPose::default();
        let body = RenderBody {
            pose: &pose,
            positions: &[[0.0; 3]],
            triangles: &[],
            normals: &[[0.0, 0.0, 1.0]],
            values: &[0.0],
        };
        let opts = RenderOptions {
            width: 11,
            height: 11,
            point_radius: 0,
            ..RenderOptions::default()
        };
        let img = render_points(&cam, &[body], &opts).unwrap();
        assert_ne!(img.pixel(5, 5), [255, 255, 255]);
        assert_eq!(img.pixel(0, 0), [255, 255, 255]);
    }
}
