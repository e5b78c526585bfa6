use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Orthonormality tolerance used when validating rotations read from files.
pub const ROTATION_TOL: f64 = 1e-9;

/// A rigid transform: `x_world = rotation * x_local + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    /// Builds a pose, rejecting rotations that are not in SO(3).
    pub fn new(translation: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self> {
        if !is_rotation(&rotation, ROTATION_TOL) {
            return Err(Error::InvalidArgument(
                "rotation is not orthonormal with det +1".into(),
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite translation".into()));
        }
        Ok(Self {
            translation,
            rotation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            translation,
            rotation: Matrix3::identity(),
        }
    }

    pub fn from_parts_unchecked(translation: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        Self {
            translation,
            rotation: axis_angle(axis, angle),
        }
    }

    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn is_valid(&self) -> bool {
        is_rotation(&self.rotation, ROTATION_TOL) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Row-major flattening of the rotation matrix.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        rotation_to_row_major(&self.rotation)
    }
}

impl std::ops::Mul for RigidPose {
    type Output = RigidPose;
    fn mul(self, rhs: RigidPose) -> RigidPose {
        self.compose(&rhs)
    }
}

pub fn rotation_to_row_major(r: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = r[(i, j)];
        }
    }
    out
}

pub fn rotation_from_row_major(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(&v[..9])
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let err = r.transpose() * r - Matrix3::identity();
    err.iter().all(|e| e.abs() < tol) && (r.determinant() - 1.0).abs() < tol * 10.0
}

pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    if angle == 0.0 || axis.norm() == 0.0 {
        return Matrix3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

/// Exponential map of a rotation vector.
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let angle = omega.norm();
    if angle < 1e-300 {
        return Matrix3::identity();
    }
    axis_angle(*omega, angle)
}

/// Geodesic angle (radians) between two rotations.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// Rotation about the camera optical axis (+z in camera frame).
pub fn rotation_about_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Nearest rotation to `m` in Frobenius norm (the special-orthogonal polar factor).
///
/// Fails when the projection is not unique: rank below two, or a
/// reflection whose two smallest singular values coincide.
pub fn svd_project(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate("non-finite matrix".into()));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    // nalgebra does not sort singular values; order them descending.
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let s_sorted = [s[order[0]], s[order[1]], s[order[2]]];
    let scale = s_sorted[0];
    if scale <= 0.0 {
        return Err(Error::Degenerate("zero matrix".into()));
    }
    let tol = 1e-12 * scale;
    if s_sorted[1] <= tol {
        return Err(Error::Degenerate("rank below two".into()));
    }
    let u_sorted = Matrix3::from_columns(&[
        u.column(order[0]).into_owned(),
        u.column(order[1]).into_owned(),
        u.column(order[2]).into_owned(),
    ]);
    let v_sorted = Matrix3::from_columns(&[
        v_t.row(order[0]).transpose(),
        v_t.row(order[1]).transpose(),
        v_t.row(order[2]).transpose(),
    ]);
    let det = (u_sorted * v_sorted.transpose()).determinant();
    if det < 0.0 && (s_sorted[1] - s_sorted[2]) <= tol {
        return Err(Error::Degenerate(
            "reflection with repeated smallest singular values".into(),
        ));
    }
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    Ok(u_sorted * d * v_sorted.transpose())
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    t: [f64; 3],
    #[serde(rename = "R")]
    r: [f64; 9],
}

impl Serialize for RigidPose {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            t: [self.translation.x, self.translation.y, self.translation.z],
            r: self.rotation_row_major(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidPose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        RigidPose::new(
            Vector3::from_row_slice(&repr.t),
            rotation_from_row_major(&repr.r),
        )
        .map_err(serde::de::Error::custom)
    }
}
