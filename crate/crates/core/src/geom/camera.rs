//! Pinhole stereo rig.
//!
//! Camera frames follow the optical convention (z forward, x right, y down).
//! The left camera frame is the endoscope frame. Pixel `(row, col)` has its
//! center at `u = col + 0.5`, `v = row + 0.5`, and a camera-frame point
//! projects to `u = fx·x/z + cx`, `v = fy·y/z + cy`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::pose::Pose;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Camera {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub left: Intrinsics,
    pub right: Intrinsics,
    /// Distance between the optical centers, meters.
    pub baseline: f64,
    /// Right camera frame expressed in the left camera frame.
    pub pose_right_in_left: Pose,
    pub width: u32,
    pub height: u32,
}

impl StereoRig {
    /// Rectified rig: identical intrinsics, right camera offset by `+baseline` along x.
    pub fn rectified(intr: Intrinsics, baseline: f64, width: u32, height: u32) -> Self {
        Self {
            left: intr,
            right: intr,
            baseline,
            pose_right_in_left: Pose::from_translation(Vector3::new(baseline, 0.0, 0.0)),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("left", &self.left), ("right", &self.right)] {
            let ok = k.fx > 0.0
                && k.fy > 0.0
                && k.cx > 0.0
                && k.cx < self.width as f64
                && k.cy > 0.0
                && k.cy < self.height as f64;
            if !ok {
                return Err(Error::InvalidRig(format!("{name} intrinsics out of range: {k:?}")));
            }
        }
        if !(self.baseline > 0.0) {
            return Err(Error::InvalidRig(format!("baseline must be > 0, got {}", self.baseline)));
        }
        let t = self.pose_right_in_left.translation.norm();
        if (t - self.baseline).abs() > 1e-9 {
            return Err(Error::InvalidRig(format!(
                "baseline {} disagrees with right-camera offset {t}",
                self.baseline
            )));
        }
        self.pose_right_in_left.validate()
    }

    pub fn intrinsics(&self, cam: Camera) -> &Intrinsics {
        match cam {
            Camera::Left => &self.left,
            Camera::Right => &self.right,
        }
    }

    /// Pose of `cam` in the left frame.
    pub fn camera_pose(&self, cam: Camera) -> Pose {
        match cam {
            Camera::Left => Pose::identity(),
            Camera::Right => self.pose_right_in_left,
        }
    }

    /// Projects a left-frame point into `cam`'s image.
    pub fn project(&self, point_left: &Vector3<f64>, cam: Camera) -> Result<Vector2<f64>> {
        let p = match cam {
            Camera::Left => *point_left,
            Camera::Right => self.pose_right_in_left.inverse().transform_point(point_left),
        };
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { z: p.z });
        }
        let k = self.intrinsics(cam);
        Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
    }

    /// Back-projects `pixel` at camera-frame depth `depth` and returns it in the left frame.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64, cam: Camera) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::BehindCamera { z: depth });
        }
        let p = self.ray_direction(pixel, cam) * depth;
        Ok(match cam {
            Camera::Left => p,
            Camera::Right => self.pose_right_in_left.transform_point(&p),
        })
    }

    /// Camera-frame ray through `pixel`, scaled so its z component is exactly 1.
    pub fn ray_direction(&self, pixel: &Vector2<f64>, cam: Camera) -> Vector3<f64> {
        let k = self.intrinsics(cam);
        Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0)
    }

    pub fn pixel_center(row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(col as f64 + 0.5, row as f64 + 0.5)
    }
}
