use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CameraModel;

/// Smallest accepted `|det H|`.
pub const DET_TOL: f64 = 1e-12;
/// Smallest accepted homogeneous scale after mapping.
pub const W_TOL: f64 = 1e-12;

/// A nonsingular 3x3 map on homogeneous 2D points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("homography".into()));
        }
        let det = m.determinant();
        if det.abs() <= DET_TOL {
            return Err(Error::Singular(format!("homography determinant {det:e}")));
        }
        Ok(Homography(m))
    }

    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    /// From 9 reals in row-major order.
    pub fn from_row_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::DimensionMismatch(format!("homography needs 9 values, got {}", v.len())));
        }
        Homography::new(Matrix3::from_row_slice(v))
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        self.0.transpose().iter().copied().collect()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::Singular("homography has no inverse".into()))?;
        Homography::new(inv)
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn compose(&self, first: &Homography) -> Result<Self> {
        Homography::new(self.0 * first.0)
    }

    pub fn apply(&self, p: (f64, f64)) -> Result<(f64, f64)> {
        apply_homography(self, p)
    }
}

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = Error;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Homography::from_row_slice(&rows.concat())
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        let m = h.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

/// Homography induced by `b`'s ground plane, taking normalized image
/// coordinates of camera `b` to those of camera `a`:
/// `H = R_a R_b^T - (t_a - R_a R_b^T t_b) n^T / d`.
pub fn homography_between(a: &CameraModel, b: &CameraModel) -> Result<Homography> {
    let r = a.rotation * b.rotation.transpose();
    let t: Vector3<f64> = a.translation - r * b.translation;
    Homography::new(r - t * b.plane_normal.transpose() / b.plane_distance)
}

/// `[x', y', w'] = H [x, y, 1]`, returned as `(x'/w', y'/w')`.
pub fn apply_homography(h: &Homography, p: (f64, f64)) -> Result<(f64, f64)> {
    let v = h.0 * Vector3::new(p.0, p.1, 1.0);
    if v.z.abs() < W_TOL {
        return Err(Error::InvalidArgument(format!("({}, {}) maps to infinity", p.0, p.1)));
    }
    Ok((v.x / v.z, v.y / v.z))
}
