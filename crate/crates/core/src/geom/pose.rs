use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating that a rotation block is orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rigid transform in SE(3). Units are meters for the translation.
///
/// A pose maps points from its child frame into its parent frame:
/// `p_parent = rotation * p_child + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose after checking the rotation block.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// `‖RᵀR − I‖_∞` and `det R = +1` within [`ORTHONORMAL_TOL`], finite translation.
    pub fn validate(&self) -> Result<()> {
        let err = orthonormality_error(&self.rotation);
        let det = self.rotation.determinant();
        if !(err < ORTHONORMAL_TOL) || !((det - 1.0).abs() < ORTHONORMAL_TOL) {
            return Err(Error::InvalidPose(format!(
                "rotation not in SO(3): orthonormality error {err:e}, det {det}"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Unit quaternion as `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        };
        [q.w, q.i, q.j, q.k]
    }

    pub fn from_quaternion_wxyz(position: [f64; 3], q: [f64; 4]) -> Result<Pose> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidPose(format!("degenerate quaternion {q:?}")));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        let pose = Pose {
            rotation: *unit.to_rotation_matrix().matrix(),
            translation: Vector3::from(position),
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Rotation angle of `self⁻¹ ∘ other` plus the translation gap, for test diagnostics.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        (c.acos(), (self.translation - other.translation).norm())
    }
}

pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    position: [f64; 3],
    quaternion_wxyz: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseJson {
            position: [self.translation.x, self.translation.y, self.translation.z],
            quaternion_wxyz: self.quaternion_wxyz(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PoseJson::deserialize(d)?;
        Pose::from_quaternion_wxyz(raw.position, raw.quaternion_wxyz)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose::from_axis_angle(
            Vector3::new(0.3, -1.0, 0.2),
            0.7,
            Vector3::new(0.01, 0.02, -0.03),
        );
        let id = p.compose(&p.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        assert!(id.is_valid());
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut r = Matrix3::identity();
        r[(0, 1)] = 1e-3;
        assert!(Pose::new(r, Vector3::zeros()).is_err());
        assert!(Pose::new(-Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn json_uses_position_and_wxyz() {
        let p = Pose::from_axis_angle(Vector3::z(), 0.3, Vector3::new(1.0, 2.0, 3.0));
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(v["position"], serde_json::json!([1.0, 2.0, 3.0]));
        let q = v["quaternion_wxyz"].as_array().unwrap();
        assert!((q[0].as_f64().unwrap() - (0.15f64).cos()).abs() < 1e-12);
        assert!((q[3].as_f64().unwrap() - (0.15f64).sin()).abs() < 1e-12);
        let back: Pose = serde_json::from_value(v).unwrap();
        assert!((back.rotation - p.rotation).amax() < 1e-12);
    }
}
