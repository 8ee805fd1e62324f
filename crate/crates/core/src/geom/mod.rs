//! Pose algebra, the stereo pinhole model and relative actions.

mod action;
mod camera;
mod euler;
mod pointmap;
mod pose;

pub use action::{
    apply_action, apply_arm, relative_action, relative_action_flagged, relative_arm, ActionStep,
    ArmState, DualArmState, ACTION_DIM, ARM_ACTION_DIM, JAW_CHANNELS,
};
pub use camera::{Camera, Intrinsics, StereoRig};
pub use euler::{euler_from_matrix, matrix_from_euler, near_gimbal_lock, wrap_angle, EulerZyx, GIMBAL_EPS};
pub use pointmap::PointMap;
pub use pose::{orthonormality_error, Pose, ORTHONORMAL_TOL};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

/// Uniformly random rotation (Haar measure) via a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    *uq.to_rotation_matrix().matrix()
}

/// Rotation about a uniformly random axis by an angle uniform in `[0, max_angle]`.
pub fn random_small_rotation<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Matrix3<f64> {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(0.0..=max_angle);
    Pose::from_axis_angle(Vector3::from(axis), angle, Vector3::zeros()).rotation
}

/// Point uniform in the ball of radius `r`.
pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, r: f64) -> Vector3<f64> {
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let rad = r * rng.random_range(0.0f64..=1.0).cbrt();
    Vector3::from(dir) * rad
}
