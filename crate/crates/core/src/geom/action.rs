//! Endoscope-centric relative actions.
//!
//! For each arm the action is the translation difference between
//! consecutive poses, the rotation difference `R_prevᵀ R_next` as Z-Y-X
//! Euler angles, and the absolute jaw angle of the next state. Everything
//! is expressed in the left-camera frame.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::euler::{euler_from_matrix, matrix_from_euler};
use super::pose::Pose;
use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 14;
pub const ARM_ACTION_DIM: usize = 7;

/// Channel indices of the jaw angles inside the flattened 14-vector.
pub const JAW_CHANNELS: [usize; 2] = [6, 13];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub pose: Pose,
    /// Jaw opening angle in radians.
    pub jaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualArmState {
    pub left: ArmState,
    pub right: ArmState,
}

impl DualArmState {
    pub fn arm(&self, side: usize) -> &ArmState {
        if side == 0 {
            &self.left
        } else {
            &self.right
        }
    }

    pub fn arm_mut(&mut self, side: usize) -> &mut ArmState {
        if side == 0 {
            &mut self.left
        } else {
            &mut self.right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionStep {
    pub delta_translation_left: Vector3<f64>,
    pub delta_euler_left: Vector3<f64>,
    pub jaw_left: f64,
    pub delta_translation_right: Vector3<f64>,
    pub delta_euler_right: Vector3<f64>,
    pub jaw_right: f64,
}

impl ActionStep {
    /// Zero-delta action that holds the given jaw angles.
    pub fn hold(jaw_left: f64, jaw_right: f64) -> Self {
        Self {
            jaw_left,
            jaw_right,
            ..Default::default()
        }
    }

    /// Layout: `[dt_l(3), de_l(3), jaw_l, dt_r(3), de_r(3), jaw_r]`.
    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        out[0..3].copy_from_slice(self.delta_translation_left.as_slice());
        out[3..6].copy_from_slice(self.delta_euler_left.as_slice());
        out[6] = self.jaw_left;
        out[7..10].copy_from_slice(self.delta_translation_right.as_slice());
        out[10..13].copy_from_slice(self.delta_euler_right.as_slice());
        out[13] = self.jaw_right;
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != ACTION_DIM {
            return Err(Error::Shape(format!(
                "action needs {ACTION_DIM} components, got {}",
                v.len()
            )));
        }
        Ok(Self {
            delta_translation_left: Vector3::new(v[0], v[1], v[2]),
            delta_euler_left: Vector3::new(v[3], v[4], v[5]),
            jaw_left: v[6],
            delta_translation_right: Vector3::new(v[7], v[8], v[9]),
            delta_euler_right: Vector3::new(v[10], v[11], v[12]),
            jaw_right: v[13],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn translation(&self, side: usize) -> Vector3<f64> {
        if side == 0 {
            self.delta_translation_left
        } else {
            self.delta_translation_right
        }
    }

    pub fn euler(&self, side: usize) -> Vector3<f64> {
        if side == 0 {
            self.delta_euler_left
        } else {
            self.delta_euler_right
        }
    }

    pub fn jaw(&self, side: usize) -> f64 {
        if side == 0 {
            self.jaw_left
        } else {
            self.jaw_right
        }
    }

    pub fn set_arm(&mut self, side: usize, dt: Vector3<f64>, de: Vector3<f64>, jaw: f64) {
        if side == 0 {
            self.delta_translation_left = dt;
            self.delta_euler_left = de;
            self.jaw_left = jaw;
        } else {
            self.delta_translation_right = dt;
            self.delta_euler_right = de;
            self.jaw_right = jaw;
        }
    }
}

/// Per-arm relative motion between two poses plus whether the Euler
/// conversion hit gimbal lock.
pub fn relative_arm(prev: &Pose, next: &Pose) -> (Vector3<f64>, Vector3<f64>, bool) {
    let dt = next.translation - prev.translation;
    let dr = prev.rotation.transpose() * next.rotation;
    let e = euler_from_matrix(&dr);
    (dt, e.angles, e.degenerate)
}

/// Relative action between consecutive dual-arm states.
pub fn relative_action(prev: &DualArmState, next: &DualArmState) -> ActionStep {
    relative_action_flagged(prev, next).0
}

/// Same as [`relative_action`], also reporting per-arm gimbal-lock flags.
pub fn relative_action_flagged(prev: &DualArmState, next: &DualArmState) -> (ActionStep, [bool; 2]) {
    let mut a = ActionStep::default();
    let mut flags = [false; 2];
    for side in 0..2 {
        let (dt, de, deg) = relative_arm(&prev.arm(side).pose, &next.arm(side).pose);
        a.set_arm(side, dt, de, next.arm(side).jaw);
        flags[side] = deg;
    }
    (a, flags)
}

pub fn apply_arm(prev: &Pose, dt: &Vector3<f64>, de: &Vector3<f64>) -> Pose {
    Pose {
        rotation: prev.rotation * matrix_from_euler(de),
        translation: prev.translation + dt,
    }
}

/// Inverse of [`relative_action`]: advances `prev` by `a`, overwriting jaws.
pub fn apply_action(prev: &DualArmState, a: &ActionStep) -> DualArmState {
    let mut next = *prev;
    for side in 0..2 {
        let arm = next.arm_mut(side);
        arm.pose = apply_arm(&prev.arm(side).pose, &a.translation(side), &a.euler(side));
        arm.jaw = a.jaw(side);
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn state(p: Pose, q: Pose) -> DualArmState {
        DualArmState {
            left: ArmState { pose: p, jaw: 0.2 },
            right: ArmState { pose: q, jaw: 0.4 },
        }
    }

    #[test]
    fn identical_states_give_zero_deltas() {
        let p = Pose::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.4, Vector3::new(0.01, 0.0, 0.05));
        let s = state(p, p);
        let a = relative_action(&s, &s);
        let v = a.to_array();
        for (i, x) in v.iter().enumerate() {
            if JAW_CHANNELS.contains(&i) {
                continue;
            }
            assert!(x.abs() < 1e-15);
        }
        assert_eq!(a.jaw_left, 0.2);
        assert_eq!(a.jaw_right, 0.4);
    }

    #[test]
    fn pure_translation() {
        let prev = state(Pose::identity(), Pose::identity());
        let mut next = prev;
        next.left.pose.translation = Vector3::new(0.01, 0.02, 0.03);
        let a = relative_action(&prev, &next);
        assert_eq!(a.delta_translation_left, Vector3::new(0.01, 0.02, 0.03));
        assert_eq!(a.delta_euler_left, Vector3::zeros());
    }

    #[test]
    fn rotation_about_camera_z() {
        // Oracle: compose explicitly and decompose with nalgebra's converter.
        let prev = state(Pose::identity(), Pose::identity());
        let mut next = prev;
        next.left.pose.rotation = *Rotation3::from_axis_angle(&Vector3::z_axis(), 0.3).matrix();
        let a = relative_action(&prev, &next);
        let rel = prev.left.pose.rotation.transpose() * next.left.pose.rotation;
        let (r, p, y) = Rotation3::from_matrix_unchecked(rel).euler_angles();
        assert!((a.delta_euler_left - Vector3::new(r, p, y)).amax() < 1e-15);
        assert!((a.delta_euler_left - Vector3::new(0.0, 0.0, 0.3)).amax() < 1e-15);
    }

    #[test]
    fn zero_action_keeps_pose() {
        let p = Pose::from_axis_angle(Vector3::x(), 0.2, Vector3::new(0.0, 0.01, 0.07));
        let s = state(p, p);
        let next = apply_action(&s, &ActionStep::hold(0.9, 0.1));
        assert_eq!(next.left.pose, p);
        assert_eq!(next.left.jaw, 0.9);
        assert_eq!(next.right.jaw, 0.1);
    }

    #[test]
    fn rotation_action_inverts() {
        let s = state(Pose::identity(), Pose::identity());
        let mut a = ActionStep::hold(0.0, 0.0);
        a.delta_euler_left = Vector3::new(0.1, -0.2, 0.3);
        let fwd = apply_action(&s, &a);
        let back_rot = fwd.left.pose.rotation * matrix_from_euler(&a.delta_euler_left).transpose();
        assert!((back_rot - nalgebra::Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn slice_length_checked() {
        assert!(ActionStep::from_slice(&[0.0; 13]).is_err());
        let a = ActionStep::from_slice(&(0..14).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        assert_eq!(a.jaw_left, 6.0);
        assert_eq!(a.delta_translation_right, Vector3::new(7.0, 8.0, 9.0));
    }
}
