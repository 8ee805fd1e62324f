use image::RgbImage;
use nalgebra::Vector3;

use super::scene::{Caster, Hit, SceneSpec};
use crate::geom::{Camera, PointMap, StereoRig};

/// One rendered stereo pair with exact point maps (both in the left frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub left: RgbImage,
    pub right: RgbImage,
    pub pointmap_left: PointMap,
    pub pointmap_right: PointMap,
    pub rig: StereoRig,
    pub seed: u64,
    pub scene_id: u64,
}

impl Sample {
    pub fn pointmap(&self, cam: Camera) -> &PointMap {
        match cam {
            Camera::Left => &self.pointmap_left,
            Camera::Right => &self.pointmap_right,
        }
    }

    pub fn image(&self, cam: Camera) -> &RgbImage {
        match cam {
            Camera::Left => &self.left,
            Camera::Right => &self.right,
        }
    }
}

fn srgb_encode(linear: f64) -> u8 {
    let c = linear.clamp(0.0, 1.0);
    let s = if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round() as u8
}

fn shade(scene: &SceneSpec, point_world: &Vector3<f64>, hit: &Hit) -> [u8; 3] {
    let to_light = Vector3::from(scene.light.position) - point_world;
    let l = to_light.normalize();
    let lambert = hit.normal.dot(&l).max(0.0);
    let k = scene.ambient + scene.light.intensity * lambert;
    std::array::from_fn(|c| srgb_encode(hit.albedo[c] * k))
}

/// Renders one camera: image plus its point map in the left frame.
pub fn render_view(scene: &SceneSpec, caster: &Caster<'_>, rig: &StereoRig, cam: Camera) -> (RgbImage, PointMap) {
    let (w, h) = (rig.width as usize, rig.height as usize);
    let mut img = RgbImage::new(rig.width, rig.height);
    let mut map = PointMap::new(w, h);
    let cam_in_left = rig.camera_pose(cam);
    let cam_in_world = scene.rig_pose.compose(&cam_in_left);
    for row in 0..h {
        for col in 0..w {
            let d_cam = rig.ray_direction(&StereoRig::pixel_center(row, col), cam);
            let d_world = cam_in_world.transform_vector(&d_cam);
            let Some(hit) = caster.cast(&cam_in_world.translation, &d_world) else {
                continue;
            };
            let p_cam = d_cam * hit.t;
            let p_left = match cam {
                Camera::Left => p_cam,
                Camera::Right => cam_in_left.transform_point(&p_cam),
            };
            let p_world = cam_in_world.translation + d_world * hit.t;
            img.put_pixel(col as u32, row as u32, image::Rgb(shade(scene, &p_world, &hit)));
            map.set(row, col, p_left);
        }
    }
    (img, map)
}

/// Ray casts both cameras; nearest hit per pixel, Lambertian + ambient shading.
pub fn render_stereo(scene: &SceneSpec, rig: &StereoRig, seed: u64, scene_id: u64) -> Sample {
    let caster = scene.caster();
    let (left, pointmap_left) = render_view(scene, &caster, rig, Camera::Left);
    let (right, pointmap_right) = render_view(scene, &caster, rig, Camera::Right);
    Sample {
        left,
        right,
        pointmap_left,
        pointmap_right,
        rig: *rig,
        seed,
        scene_id,
    }
}
