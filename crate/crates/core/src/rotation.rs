//! SO(3) conversions: rotation matrices, extrinsic x-y-z Euler angles,
//! axis-angle / rotation vectors, and seeded uniform random rotations.
//!
//! Euler convention: `R = R_z(yaw) · R_y(pitch) · R_x(roll)` with canonical
//! ranges `roll, yaw ∈ [-π, π]` and `pitch ∈ [-π/2, π/2]`. Rotations act on
//! row-vector points as `p → p · Rᵀ` (equivalently `R p` on columns).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::{FRAC_PI_2, PI};

/// Default orthonormality tolerance for validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-8;

/// `|r31| ≥ 1 - GIMBAL_EPS` triggers the gimbal-lock recovery branch.
const GIMBAL_EPS: f64 = 1e-9;

/// Errors raised by rotation construction and conversion.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RotationError {
    /// Matrix failed the orthonormality / determinant check.
    #[error("matrix is not a rotation: max deviation {0:.3e} exceeds tolerance {1:.3e}")]
    NotARotation(f64, f64),
    /// An input value was NaN or infinite.
    #[error("rotation inputs must be finite")]
    NonFinite,
    /// Axis-angle input axis was not unit length.
    #[error("rotation axis must be unit length, got norm {0}")]
    NonUnitAxis(f64),
}

/// A validated proper rotation matrix (orthonormal, `det = +1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Validating constructor; `tol` bounds both `‖RᵀR - I‖∞` and `|det - 1|`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self, RotationError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(RotationError::NonFinite);
        }
        let dev = rotation_deviation(&m);
        if dev > tol {
            return Err(RotationError::NotARotation(dev, tol));
        }
        Ok(Self(m))
    }

    /// For internal construction of matrices that are rotations by
    /// construction (compositions, closed forms).
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(rotation_deviation(&m) < 1e-6);
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Composition `self · other`.
    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        Self(self.0 * other.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        Self(self.0.transpose())
    }

    /// Image of `(1, 0, 0)` under this rotation (first column in the
    /// row-vector convention `p → p · Rᵀ`).
    pub fn rotated_x_axis(&self) -> Vector3<f64> {
        Vector3::new(self.0[(0, 0)], self.0[(1, 0)], self.0[(2, 0)])
    }
}

impl Serialize for RotationMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RotationMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = <[[f64; 3]; 3]>::deserialize(d)?;
        let m = Matrix3::new(
            r[0][0], r[0][1], r[0][2],
            r[1][0], r[1][1], r[1][2],
            r[2][0], r[2][1], r[2][2],
        );
        RotationMatrix::from_matrix(m, 1e-6).map_err(D::Error::custom)
    }
}

/// Max deviation of `m` from a proper rotation: `max(‖mᵀm - I‖∞, |det - 1|)`.
fn rotation_deviation(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m;
    let mut dev: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev.max((m.determinant() - 1.0).abs())
}

/// True when `m` is within `tol` of a proper rotation.
pub fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    m.iter().all(|v| v.is_finite()) && rotation_deviation(m) <= tol
}

/// Extrinsic x-y-z Euler angles in radians.
///
/// Canonical ranges: `roll, yaw ∈ [-π, π]`, `pitch ∈ [-π/2, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    /// Validating constructor enforcing the canonical ranges.
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Result<Self, RotationError> {
        if !(roll.is_finite() && pitch.is_finite() && yaw.is_finite()) {
            return Err(RotationError::NonFinite);
        }
        // A hair of slack so values quantized at the range boundary pass.
        let slack = 1e-9;
        if roll.abs() > PI + slack || yaw.abs() > PI + slack || pitch.abs() > FRAC_PI_2 + slack {
            return Err(RotationError::NonFinite);
        }
        Ok(Self { roll, pitch, yaw })
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self, RotationError> {
        Self::new(v[0], v[1], v[2])
    }
}

/// Axis-angle rotation: unit axis, angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    pub angle: f64,
}

impl AxisAngle {
    pub fn axis_vector(&self) -> Vector3<f64> {
        Vector3::new(self.axis[0], self.axis[1], self.axis[2])
    }

    /// Rotation vector `angle · axis`.
    pub fn to_rotation_vector(&self) -> [f64; 3] {
        [
            self.axis[0] * self.angle,
            self.axis[1] * self.angle,
            self.axis[2] * self.angle,
        ]
    }

    /// Splits a rotation vector into unit axis and magnitude; the zero vector
    /// maps to a zero rotation about `(1, 0, 0)`.
    pub fn from_rotation_vector(v: [f64; 3]) -> Self {
        let vec = Vector3::new(v[0], v[1], v[2]);
        let angle = vec.norm();
        if angle < 1e-12 {
            Self { axis: [1.0, 0.0, 0.0], angle: 0.0 }
        } else {
            let a = vec / angle;
            Self { axis: [a.x, a.y, a.z], angle }
        }
    }
}

/// Composes `R = R_z(yaw) · R_y(pitch) · R_x(roll)` in closed form.
pub fn euler_to_matrix(e: &EulerAngles) -> RotationMatrix {
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sy, cy) = e.yaw.sin_cos();
    RotationMatrix::from_matrix_unchecked(Matrix3::new(
        cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
        sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
        -sp,     cp * sr,                cp * cr,
    ))
}

/// Recovers canonical Euler angles from a rotation matrix.
///
/// At gimbal lock (`|r31| ≥ 1 - 1e-9`, i.e. pitch `±π/2`) roll is fixed to 0
/// and the remaining rotation is folded into yaw; the recovered angles still
/// recompose to the input matrix.
pub fn matrix_to_euler(r: &RotationMatrix) -> EulerAngles {
    let m = r.matrix();
    let r31 = m[(2, 0)];
    let pitch = (-r31).clamp(-1.0, 1.0).asin();
    if r31.abs() >= 1.0 - GIMBAL_EPS {
        EulerAngles {
            roll: 0.0,
            pitch,
            yaw: (-m[(0, 1)]).atan2(m[(1, 1)]),
        }
    } else {
        EulerAngles {
            roll: m[(2, 1)].atan2(m[(2, 2)]),
            pitch,
            yaw: m[(1, 0)].atan2(m[(0, 0)]),
        }
    }
}

/// Rodrigues' formula; the axis must be unit length within `1e-6`.
pub fn axis_angle_to_matrix(aa: &AxisAngle) -> Result<RotationMatrix, RotationError> {
    let a = aa.axis_vector();
    if !a.iter().all(|v| v.is_finite()) || !aa.angle.is_finite() {
        return Err(RotationError::NonFinite);
    }
    let norm = a.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(RotationError::NonUnitAxis(norm));
    }
    let a = a / norm;
    let (s, c) = aa.angle.sin_cos();
    let k = Matrix3::new(
        0.0, -a.z, a.y,
        a.z, 0.0, -a.x,
        -a.y, a.x, 0.0,
    );
    let m = Matrix3::identity() + k * s + (k * k) * (1.0 - c);
    Ok(RotationMatrix::from_matrix_unchecked(m))
}

/// Canonical axis-angle of a rotation: angle in `[0, π]`.
///
/// Near-identity rotations report axis `(1, 0, 0)`; near `π` the axis is
/// recovered from the symmetric part of the matrix (the diagonal-dominant
/// quaternion branch), with its sign fixed by the skew part when that is
/// resolvable and by the largest component otherwise.
pub fn matrix_to_axis_angle(r: &RotationMatrix) -> AxisAngle {
    // Shepperd-style quaternion extraction: numerically stable across the
    // whole angle range, including both fallbacks above.
    let m = r.matrix();
    let tr = m.trace();
    let (mut w, mut v);
    if tr > 0.0 {
        let s = (1.0 + tr).sqrt();
        w = 0.5 * s;
        let inv = 0.5 / s;
        v = Vector3::new(
            (m[(2, 1)] - m[(1, 2)]) * inv,
            (m[(0, 2)] - m[(2, 0)]) * inv,
            (m[(1, 0)] - m[(0, 1)]) * inv,
        );
    } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).max(0.0).sqrt();
        let inv = 0.5 / s;
        w = (m[(2, 1)] - m[(1, 2)]) * inv;
        v = Vector3::new(
            0.5 * s,
            (m[(0, 1)] + m[(1, 0)]) * inv,
            (m[(0, 2)] + m[(2, 0)]) * inv,
        );
    } else if m[(1, 1)] >= m[(2, 2)] {
        let s = (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).max(0.0).sqrt();
        let inv = 0.5 / s;
        w = (m[(0, 2)] - m[(2, 0)]) * inv;
        v = Vector3::new(
            (m[(0, 1)] + m[(1, 0)]) * inv,
            0.5 * s,
            (m[(1, 2)] + m[(2, 1)]) * inv,
        );
    } else {
        let s = (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).max(0.0).sqrt();
        let inv = 0.5 / s;
        w = (m[(1, 0)] - m[(0, 1)]) * inv;
        v = Vector3::new(
            (m[(0, 2)] + m[(2, 0)]) * inv,
            (m[(1, 2)] + m[(2, 1)]) * inv,
            0.5 * s,
        );
    }
    // Force angle into [0, π] by quaternion sign.
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let vn = v.norm();
    if vn < 1e-12 {
        return AxisAngle { axis: [1.0, 0.0, 0.0], angle: 0.0 };
    }
    let axis = v / vn;
    AxisAngle {
        axis: [axis.x, axis.y, axis.z],
        angle: 2.0 * vn.atan2(w),
    }
}

/// Applies a rotation to row-vector points: each `p → p · Rᵀ`.
pub fn apply_rotation(points: &[Vector3<f64>], r: &RotationMatrix) -> Vec<Vector3<f64>> {
    points.iter().map(|p| r.matrix() * p).collect()
}

/// Uniform random rotation drawn from a caller-supplied RNG (normalized
/// 4-normal quaternion construction).
pub fn random_rotation_with<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n < 1e-9 {
            continue;
        }
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w),       2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),       1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),       2.0 * (y * z + x * w),       1.0 - 2.0 * (x * x + y * y),
        );
        return RotationMatrix::from_matrix_unchecked(m);
    }
}

/// Deterministic uniform random rotation for a seed.
pub fn random_rotation(seed: u64) -> RotationMatrix {
    random_rotation_with(&mut ChaCha8Rng::seed_from_u64(seed))
}
