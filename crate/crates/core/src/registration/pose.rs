use nalgebra::{Isometry3, Matrix3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed drift of `RᵀR` from identity before a rotation is re-normalized.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Rigid transform in SE(3).
///
/// Tangent vectors are `[ω; ρ]` (rotation first) and perturbations act on
/// the right: `T ⊞ δ = T · Exp(δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseJson", try_from = "PoseJson")]
pub struct Pose {
    iso: Isometry3<f64>,
}

/// `{"t": [x, y, z], "q": [qx, qy, qz, qw]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseJson {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

impl From<Pose> for PoseJson {
    fn from(p: Pose) -> Self {
        let t = p.translation();
        let q = p.iso.rotation.quaternion();
        PoseJson { t: [t.x, t.y, t.z], q: [q.i, q.j, q.k, q.w] }
    }
}

impl TryFrom<PoseJson> for Pose {
    type Error = Error;

    fn try_from(j: PoseJson) -> Result<Self> {
        let [x, y, z, w] = j.q;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Parse(format!("quaternion norm {norm} is not 1")));
        }
        Ok(Pose::new(UnitQuaternion::new_normalize(q), Vector3::from(j.t)))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { iso: Isometry3::identity() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { iso: Isometry3::from_parts(Translation3::from(translation), rotation) }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Builds a pose from a rotation matrix, rejecting non-orthonormal input.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let drift = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if drift > ORTHONORMAL_TOLERANCE || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOLERANCE {
            return Err(Error::InvalidInput("rotation is not orthonormal with det +1".into()));
        }
        let r = Rotation3::from_matrix_unchecked(*rotation);
        Ok(Self::new(UnitQuaternion::from_rotation_matrix(&r), translation))
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.iso
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.iso.rotation
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.iso.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.iso.translation.vector
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.iso.rotation * p + self.iso.translation.vector
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { iso: self.iso * other.iso }.renormalized()
    }

    pub fn inverse(&self) -> Pose {
        Pose { iso: self.iso.inverse() }.renormalized()
    }

    /// `self⁻¹ · other`, the pose of `other` expressed in `self`'s frame.
    pub fn between(&self, other: &Pose) -> Pose {
        Pose { iso: self.iso.inv_mul(&other.iso) }.renormalized()
    }

    /// SE(3) exponential of `[ω; ρ]`.
    pub fn exp(delta: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let rho = Vector3::new(delta[3], delta[4], delta[5]);
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let w = skew(&omega);
        let (a, b) = if theta < 1e-5 {
            (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
        } else {
            ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
        };
        let v = Matrix3::identity() + w * a + w * w * b;
        Pose::new(UnitQuaternion::from_scaled_axis(omega), v * rho)
    }

    /// `self · Exp(delta)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.iso.rotation.angle()
    }

    /// `max |RᵀR − I|` of the rotation matrix.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        (r.transpose() * r - Matrix3::identity()).amax()
    }

    fn renormalized(mut self) -> Self {
        let q = self.iso.rotation.into_inner();
        if (q.norm() - 1.0).abs() > ORTHONORMAL_TOLERANCE * 0.25 {
            self.iso.rotation = UnitQuaternion::new_normalize(q);
        }
        self
    }
}

/// `[v]×`, so that `[v]× u = v × u`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
