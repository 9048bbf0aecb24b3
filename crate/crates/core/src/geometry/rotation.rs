use std::f64::consts::PI;

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on orthonormality and determinant accepted by [`Rotation::new`].
pub const ROTATION_TOL: f64 = 1e-9;

/// Residual norm below which a Gram-Schmidt input is considered degenerate.
pub const GRAM_SCHMIDT_EPS: f64 = 1e-12;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Signed difference between two angles, wrapped into `[-π, π)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// A proper rotation (element of SO(3)) in the camera frame.
///
/// Camera axes follow the KITTI convention: x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates that `m` is orthonormal and right-handed within [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        Rotation::with_tolerance(m, ROTATION_TOL)
    }

    pub fn with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rotation matrix".into()));
        }
        let err = orthonormality_error(&m);
        if err > tol {
            return Err(Error::invalid(format!(
                "matrix is not orthonormal (max |RᵀR - I| = {err:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::invalid(format!("rotation determinant {det} != 1")));
        }
        Ok(Rotation(m))
    }

    /// Rotation about the camera's vertical (y) axis by `theta`.
    ///
    /// The object's local +x axis (its length direction) maps to
    /// `(cos θ, 0, -sin θ)`, which is the KITTI `rotation_y` convention.
    pub fn from_yaw(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    /// Yaw angle in `[-π, π]`. Only meaningful for pure-yaw rotations.
    pub fn yaw(&self) -> f64 {
        self.0[(0, 2)].atan2(self.0[(0, 0)])
    }

    pub fn is_yaw_only(&self, tol: f64) -> bool {
        let m = &self.0;
        (m[(1, 1)] - 1.0).abs() <= tol
            && m[(0, 1)].abs() <= tol
            && m[(1, 0)].abs() <= tol
            && m[(1, 2)].abs() <= tol
            && m[(2, 1)].abs() <= tol
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Column `i` of the matrix: the image of local axis `i`.
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.0.column(i).into_owned()
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation {
    type Error = Error;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Rotation::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }
}

impl From<Rotation> for [[f64; 3]; 3] {
    fn from(r: Rotation) -> Self {
        r.rows()
    }
}

/// `max |RᵀR − I|` over all entries.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// Maps a 6D continuous representation to a rotation.
///
/// The first three components give the first column after normalization; the
/// second three are orthogonalized against it to form the second column; the
/// third column is their cross product.
pub fn gram_schmidt_6d(v: &[f64; 6]) -> Result<Rotation> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("6d rotation vector".into()));
    }
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 < GRAM_SCHMIDT_EPS {
        return Err(Error::Degenerate("first 6d sub-vector is zero".into()));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 < GRAM_SCHMIDT_EPS {
        return Err(Error::Degenerate(
            "6d sub-vectors are parallel or the second is zero".into(),
        ));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Rotation(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Rotation taking the optical axis `(0, 0, 1)` onto the viewing ray through `center`.
///
/// This is the shortest-arc rotation; for rays opposite the optical axis the
/// half turn about the vertical axis is used.
pub fn viewing_ray_rotation(center: &Vector3<f64>) -> Result<Rotation> {
    let norm = center.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Degenerate("viewing ray through a zero-norm center".into()));
    }
    let ray = center / norm;
    let optical = Vector3::z();
    let q = UnitQuaternion::rotation_between(&optical, &ray).unwrap_or_else(|| {
        UnitQuaternion::from_axis_angle(&Unit::new_unchecked(Vector3::y()), PI)
    });
    Ok(Rotation(q.to_rotation_matrix().into_inner()))
}

/// Converts an allocentric orientation (relative to the viewing ray) into the
/// egocentric camera-frame orientation for an object centered at `center`.
pub fn allocentric_to_egocentric(r_alloc: &Rotation, center: &Vector3<f64>) -> Result<Rotation> {
    let ray = viewing_ray_rotation(center)?;
    Ok(ray.compose(r_alloc))
}

/// Inverse of [`allocentric_to_egocentric`].
pub fn egocentric_to_allocentric(r_ego: &Rotation, center: &Vector3<f64>) -> Result<Rotation> {
    let ray = viewing_ray_rotation(center)?;
    Ok(ray.transpose().compose(r_ego))
}

/// Yaw-only variant used by the multi-bin head: egocentric yaw from the
/// observation angle and the object center (`yaw = alpha + atan2(x, z)`).
pub fn observation_angle_to_yaw(alpha: f64, center: &Vector3<f64>) -> f64 {
    wrap_angle(alpha + center.x.atan2(center.z))
}

pub fn yaw_to_observation_angle(yaw: f64, center: &Vector3<f64>) -> f64 {
    wrap_angle(yaw - center.x.atan2(center.z))
}
