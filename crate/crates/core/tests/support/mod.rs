//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::Vector3;
use scope3d::geom::{Camera, StereoRig};
use scope3d::scenegen::{Sample, SceneSpec};

/// Largest distance (px) between a valid point's projection through its own
/// camera and the center of the pixel that stores it.
pub fn max_reprojection_px(sample: &Sample) -> f64 {
    let mut worst = 0.0f64;
    for cam in [Camera::Left, Camera::Right] {
        let map = sample.pointmap(cam);
        for row in 0..map.height {
            for col in 0..map.width {
                let i = map.index(row, col);
                if !map.valid[i] {
                    continue;
                }
                let px = sample.rig.project(&map.point(i), cam).expect("valid points lie in front");
                worst = worst.max((px - StereoRig::pixel_center(row, col)).norm());
            }
        }
    }
    worst
}

pub struct Consistency {
    /// Largest gap between a stored point and the surface seen from the other camera.
    pub max_gap_m: f64,
    pub covisible: usize,
    pub grazing: usize,
    pub checked: usize,
}

/// Incidence cosine below which a point does not count as co-visible.
pub const GRAZING_COS: f64 = 0.01;

/// Casts from the other camera toward every valid point of each map. Points
/// occluded from, or seen at grazing incidence by, the other camera are
/// skipped; for the rest the nearest hit must coincide with the stored point.
pub fn left_right_consistency(scene: &SceneSpec, sample: &Sample) -> Consistency {
    let caster = scene.caster();
    let mut out = Consistency {
        max_gap_m: 0.0,
        covisible: 0,
        grazing: 0,
        checked: 0,
    };
    const OCCLUSION_M: f64 = 1e-5;
    for (stored, other) in [(Camera::Left, Camera::Right), (Camera::Right, Camera::Left)] {
        let map = sample.pointmap(stored);
        let other_in_world = scene.rig_pose.compose(&sample.rig.camera_pose(other));
        for i in 0..map.len() {
            if !map.valid[i] {
                continue;
            }
            out.checked += 1;
            let p_world = scene.rig_pose.transform_point(&map.point(i));
            let dir: Vector3<f64> = p_world - other_in_world.translation;
            let dist = dir.norm();
            let Some(hit) = caster.cast(&other_in_world.translation, &dir) else {
                out.max_gap_m = f64::INFINITY;
                continue;
            };
            let hit_dist = hit.t * dist;
            if hit_dist < dist - OCCLUSION_M {
                continue;
            }
            // Near-tangent rays turn f32 storage rounding into large gaps along the ray.
            if hit.normal.dot(&dir).abs() < GRAZING_COS * dist {
                out.grazing += 1;
                continue;
            }
            out.covisible += 1;
            out.max_gap_m = out.max_gap_m.max((hit_dist - dist).abs());
        }
    }
    out
}
