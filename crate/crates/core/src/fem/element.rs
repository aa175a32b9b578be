//! Single-point element kinematics for linear hexahedra and tetrahedra.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::mesh::ElementKind;

const HEX_NATURAL: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Rest-configuration quantities of one element evaluated at its centroid.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    /// Spatial shape-function gradients `dN_a/dX` at the centroid.
    pub grads: Vec<[f64; 3]>,
    pub volume: f64,
    /// Flanagan-Belytschko hourglass shape vectors (hexahedra only). They
    /// annihilate every linear displacement field of the rest element.
    pub hourglass: Option<[[f64; 8]; 4]>,
}

impl ElementGeometry {
    pub fn new(kind: ElementKind, rest: &[[f64; 3]]) -> Result<Self> {
        let natural: Vec<[f64; 3]> = match kind {
            ElementKind::Hex8 => HEX_NATURAL.iter().map(|p| p.map(|x| x / 8.0)).collect(),
            ElementKind::Tet4 => vec![
                [-1.0, -1.0, -1.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
        };
        let mut jac: Matrix3<f64> = Matrix3::zeros();
        for (x, dn) in rest.iter().zip(&natural) {
            for i in 0..3 {
                for j in 0..3 {
                    jac[(i, j)] += x[i] * dn[j];
                }
            }
        }
        let det = jac.determinant();
        let scale = match kind {
            ElementKind::Hex8 => 8.0,
            ElementKind::Tet4 => 1.0 / 6.0,
        };
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::DegenerateElement { element: 0 });
        }
        let jinv_t = jac.try_inverse().ok_or(Error::DegenerateElement { element: 0 })?.transpose();
        let grads: Vec<[f64; 3]> = natural
            .iter()
            .map(|dn| {
                let g = jinv_t * nalgebra::Vector3::new(dn[0], dn[1], dn[2]);
                [g.x, g.y, g.z]
            })
            .collect();
        let hourglass = match kind {
            ElementKind::Hex8 => {
                let mut gammas = [[0.0; 8]; 4];
                for (alpha, gamma) in gammas.iter_mut().enumerate() {
                    let h: [f64; 8] = std::array::from_fn(|a| {
                        let [xi, eta, zeta] = HEX_NATURAL[a];
                        match alpha {
                            0 => xi * eta,
                            1 => eta * zeta,
                            2 => xi * zeta,
                            _ => xi * eta * zeta,
                        }
                    });
                    let mut hx = [0.0; 3];
                    for a in 0..8 {
                        for i in 0..3 {
                            hx[i] += h[a] * rest[a][i];
                        }
                    }
                    for a in 0..8 {
                        gamma[a] = h[a]
                            - (hx[0] * grads[a][0] + hx[1] * grads[a][1] + hx[2] * grads[a][2]);
                    }
                }
                Some(gammas)
            }
            ElementKind::Tet4 => None,
        };
        Ok(ElementGeometry {
            grads,
            volume: det * scale,
            hourglass,
        })
    }

    /// `F = sum_a x_a (x) dN_a/dX`.
    pub fn deformation_gradient(&self, current: &[[f64; 3]]) -> Matrix3<f64> {
        let mut f = Matrix3::zeros();
        for (x, g) in current.iter().zip(&self.grads) {
            for i in 0..3 {
                for j in 0..3 {
                    f[(i, j)] += x[i] * g[j];
                }
            }
        }
        f
    }
}

/// Deformation gradient of one element at its centroid.
pub fn deformation_gradient(
    kind: ElementKind,
    rest: &[[f64; 3]],
    current: &[[f64; 3]],
) -> Result<Matrix3<f64>> {
    if rest.len() != kind.nodes_per_element() || current.len() != rest.len() {
        return Err(Error::invalid(format!(
            "{kind:?} needs {} nodes, got {} rest and {} current",
            kind.nodes_per_element(),
            rest.len(),
            current.len()
        )));
    }
    Ok(ElementGeometry::new(kind, rest)?.deformation_gradient(current))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brick() -> Vec<[f64; 3]> {
        vec![
            [0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [2.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 3.0],
            [2.0, 0.0, 3.0],
            [2.0, 1.0, 3.0],
            [0.0, 1.0, 3.0],
        ]
    }

    fn tet() -> Vec<[f64; 3]> {
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn identity_at_rest() {
        for (kind, x) in [(ElementKind::Hex8, brick()), (ElementKind::Tet4, tet())] {
            let f = deformation_gradient(kind, &x, &x).unwrap();
            assert!((f - Matrix3::identity()).norm() < 1e-14);
        }
    }

    #[test]
    fn uniform_scaling() {
        let x = brick();
        let y: Vec<_> = x.iter().map(|p| p.map(|c| 2.0 * c)).collect();
        let f = deformation_gradient(ElementKind::Hex8, &x, &y).unwrap();
        assert!((f - Matrix3::identity() * 2.0).norm() < 1e-14);
    }

    #[test]
    fn simple_shear() {
        for (kind, x) in [(ElementKind::Hex8, brick()), (ElementKind::Tet4, tet())] {
            let y: Vec<_> = x.iter().map(|p| [p[0] + 0.3 * p[1], p[1], p[2]]).collect();
            let f = deformation_gradient(kind, &x, &y).unwrap();
            let mut expected = Matrix3::identity();
            expected[(0, 1)] = 0.3;
            assert!((f - expected).norm() < 1e-14, "{f}");
        }
    }

    #[test]
    fn volumes() {
        assert!((ElementGeometry::new(ElementKind::Hex8, &brick()).unwrap().volume - 6.0).abs() < 1e-12);
        assert!((ElementGeometry::new(ElementKind::Tet4, &tet()).unwrap().volume - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_rest_rejected() {
        let flat = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(matches!(
            deformation_gradient(ElementKind::Tet4, &flat, &flat),
            Err(Error::DegenerateElement { .. })
        ));
    }

    #[test]
    fn hourglass_vectors_ignore_linear_fields() {
        let x = brick();
        let geo = ElementGeometry::new(ElementKind::Hex8, &x).unwrap();
        let g = geo.hourglass.unwrap();
        for gamma in &g {
            for i in 0..3 {
                let lin: f64 = (0..8)
                    .map(|a| gamma[a] * (0.7 + 0.2 * x[a][0] - 1.3 * x[a][1] + 0.4 * x[a][2] + x[a][i]))
                    .sum();
                assert!(lin.abs() < 1e-12);
            }
        }
    }
}
