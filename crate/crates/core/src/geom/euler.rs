//! Intrinsic Z-Y-X (yaw-pitch-roll) Euler angles.
//!
//! Angles are stored as `(roll, pitch, yaw)`, rotations about x, y and z
//! respectively, with `R = Rz(yaw) · Ry(pitch) · Rx(roll)`. Every component
//! is wrapped into `(−π, π]`.
//!
//! At gimbal lock (`|pitch|` within [`GIMBAL_EPS`] of `π/2`) only `roll ∓ yaw`
//! is observable. Yaw is pinned to zero and roll absorbs the free angle, so
//! `matrix_from_euler(euler_from_matrix(R))` still reproduces `R`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};

pub const GIMBAL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerZyx {
    /// `(roll, pitch, yaw)` in radians.
    pub angles: Vector3<f64>,
    /// Set when the input sat within [`GIMBAL_EPS`] of gimbal lock.
    pub degenerate: bool,
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

pub fn near_gimbal_lock(r: &Matrix3<f64>) -> bool {
    let pitch = (-r[(2, 0)]).atan2((r[(0, 0)].powi(2) + r[(1, 0)].powi(2)).sqrt());
    (pitch.abs() - FRAC_PI_2).abs() < GIMBAL_EPS
}

pub fn euler_from_matrix(r: &Matrix3<f64>) -> EulerZyx {
    let pitch = (-r[(2, 0)]).atan2((r[(0, 0)].powi(2) + r[(1, 0)].powi(2)).sqrt());
    if (pitch.abs() - FRAC_PI_2).abs() < GIMBAL_EPS {
        // R01 = sin(roll ∓ yaw), R11 = cos(roll ∓ yaw) with yaw = 0.
        let (pitch, roll) = if pitch > 0.0 {
            (FRAC_PI_2, r[(0, 1)].atan2(r[(1, 1)]))
        } else {
            (-FRAC_PI_2, (-r[(0, 1)]).atan2(r[(1, 1)]))
        };
        return EulerZyx {
            angles: Vector3::new(wrap_angle(roll), pitch, 0.0),
            degenerate: true,
        };
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    EulerZyx {
        angles: Vector3::new(wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw)),
        degenerate: false,
    }
}

pub fn matrix_from_euler(e: &Vector3<f64>) -> Matrix3<f64> {
    let (sr, cr) = e.x.sin_cos();
    let (sp, cp) = e.y.sin_cos();
    let (sy, cy) = e.z.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}
