//! Compressible Mooney-Rivlin hyperelasticity with a Prony-series
//! viscoelastic deviatoric response.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PronyTerm {
    /// Relative modulus in (0, 1).
    pub g: f64,
    /// Relaxation time (s).
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub c10: f64,
    pub c01: f64,
    pub d1: f64,
    #[serde(default)]
    pub prony: Vec<PronyTerm>,
    pub density: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams::beam()
    }
}

impl MaterialParams {
    /// Viscoelastic beam rubber: C10 = 1.5e5, C01 = 5e3, D1 = 1e-7 with a
    /// two-term Prony series (g = 0.3, 0.49; tau = 0.2, 0.5 s).
    pub fn beam() -> Self {
        MaterialParams {
            c10: 1.5e5,
            c01: 5e3,
            d1: 1e-7,
            prony: vec![PronyTerm { g: 0.3, tau: 0.2 }, PronyTerm { g: 0.49, tau: 0.5 }],
            density: 1.0,
        }
    }

    /// Soft hyperelastic solid used for the tetrahedral blob (C10 = 0.26, D1 = 4.9e-2).
    pub fn soft() -> Self {
        MaterialParams {
            c10: 0.26,
            c01: 0.0,
            d1: 4.9e-2,
            prony: Vec::new(),
            density: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c10 > 0.0
            && self.d1 > 0.0
            && self.c01 >= 0.0
            && self.density > 0.0
            && [self.c10, self.c01, self.d1, self.density].iter().all(|x| x.is_finite());
        if !ok {
            return Err(Error::invalid(format!(
                "material requires c10 > 0, c01 >= 0, d1 > 0, density > 0 (got {self:?})"
            )));
        }
        for (i, t) in self.prony.iter().enumerate() {
            if !(t.g > 0.0 && t.g < 1.0 && t.tau > 0.0 && t.tau.is_finite()) {
                return Err(Error::invalid(format!(
                    "prony term {i} requires 0 < g < 1 and tau > 0 (got g={}, tau={})",
                    t.g, t.tau
                )));
            }
        }
        if self.prony_sum() >= 1.0 {
            return Err(Error::invalid("prony relative moduli must sum to less than 1"));
        }
        Ok(())
    }

    pub fn prony_sum(&self) -> f64 {
        self.prony.iter().map(|t| t.g).sum()
    }

    /// Initial shear modulus `2 (c10 + c01)`.
    pub fn shear_modulus(&self) -> f64 {
        2.0 * (self.c10 + self.c01)
    }

    /// Initial bulk modulus `2 / d1`.
    pub fn bulk_modulus(&self) -> f64 {
        2.0 / self.d1
    }

    /// Small-strain dilatational wave speed.
    pub fn wave_speed(&self) -> f64 {
        ((self.bulk_modulus() + 4.0 / 3.0 * self.shear_modulus()) / self.density).sqrt()
    }
}

/// Second Piola-Kirchhoff stress split into its isochoric and volumetric parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pk2Split {
    pub isochoric: Matrix3<f64>,
    pub volumetric: Matrix3<f64>,
}

impl Pk2Split {
    pub fn total(&self) -> Matrix3<f64> {
        self.isochoric + self.volumetric
    }
}

/// Closed-form `S = 2 dPsi/dC` for
/// `Psi = c10 (I1b - 3) + c01 (I2b - 3) + (J - 1)^2 / d1`.
pub fn pk2_split(f: &Matrix3<f64>, mat: &MaterialParams) -> Result<Pk2Split> {
    let j = f.determinant();
    if !(j > 0.0) {
        return Err(Error::InvertedElement {
            element: None,
            det_f: j,
            step: None,
        });
    }
    let c = f.transpose() * f;
    let c_inv = c.try_inverse().ok_or(Error::SingularMatrix)?;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let id = Matrix3::identity();
    let j23 = j.powf(-2.0 / 3.0);
    let j43 = j23 * j23;
    let isochoric = (id - c_inv * (i1 / 3.0)) * (2.0 * mat.c10 * j23)
        + (id * i1 - c - c_inv * (2.0 * i2 / 3.0)) * (2.0 * mat.c01 * j43);
    let volumetric = c_inv * (2.0 / mat.d1 * (j - 1.0) * j);
    Ok(Pk2Split {
        isochoric,
        volumetric,
    })
}

pub fn pk2_stress(f: &Matrix3<f64>, mat: &MaterialParams) -> Result<Matrix3<f64>> {
    pk2_split(f, mat).map(|s| s.total())
}

/// Strain energy density `Psi(F)` per unit reference volume.
pub fn strain_energy(f: &Matrix3<f64>, mat: &MaterialParams) -> f64 {
    let j = f.determinant();
    let c = f.transpose() * f;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let j23 = j.powf(-2.0 / 3.0);
    mat.c10 * (j23 * i1 - 3.0) + mat.c01 * (j23 * j23 * i2 - 3.0) + (j - 1.0).powi(2) / mat.d1
}

/// Push-forward `sigma = J^-1 F S F^T`.
pub fn cauchy_from_pk2(f: &Matrix3<f64>, s: &Matrix3<f64>) -> Matrix3<f64> {
    f * s * f.transpose() / f.determinant()
}

pub fn to_voigt(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(1, 2)], m[(0, 2)]]
}

pub fn from_voigt(v: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(v[0], v[3], v[5], v[3], v[1], v[4], v[5], v[4], v[2])
}
