use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Heightfield, Light, Primitive, SceneSpec, Texture, Wave};
use crate::error::{Error, Result};
use crate::geom::{random_small_rotation, Camera, Intrinsics, Pose, StereoRig};

/// Closed interval `[min, max]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Range { min: v[0], max: v[1] }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn check(&self, name: &str, lo: f64, hi: f64) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Config(format!("{name}: empty or non-finite range {self:?}")));
        }
        if self.min < lo || self.max > hi {
            return Err(Error::Config(format!("{name}: {self:?} outside physical bounds [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Domain-randomization ranges. Lengths in meters, angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationConfig {
    pub width: u32,
    pub height: u32,
    pub baseline_m: Range,
    pub focal_px: Range,
    pub aspect_jitter: f64,
    pub principal_jitter_px: f64,
    /// Relative rotation jitter between the two cameras.
    pub extrinsic_jitter_deg: f64,
    /// Tilt of the rig relative to the surface.
    pub rig_rotation_deg: f64,
    pub rig_translation_m: f64,
    pub base_depth_m: Range,
    pub heightfield_amplitude_m: Range,
    pub heightfield_wavelength_m: Range,
    pub light_offset_m: f64,
    pub light_intensity: Range,
    pub ambient: Range,
    pub texture_frequency: Range,
    pub texture_contrast: Range,
    pub max_primitives: usize,
    pub primitive_radius_m: Range,
    /// Working depth range every surface hit must fall in.
    pub depth_range_m: Range,
    pub master_seed: u64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            baseline_m: Range::new(0.003, 0.006),
            focal_px: Range::new(75.0, 100.0),
            aspect_jitter: 0.02,
            principal_jitter_px: 2.0,
            extrinsic_jitter_deg: 0.5,
            rig_rotation_deg: 10.0,
            rig_translation_m: 0.005,
            base_depth_m: Range::new(0.06, 0.095),
            heightfield_amplitude_m: Range::new(0.002, 0.012),
            heightfield_wavelength_m: Range::new(0.015, 0.06),
            light_offset_m: 0.015,
            light_intensity: Range::new(0.6, 1.1),
            ambient: Range::new(0.1, 0.3),
            texture_frequency: Range::new(40.0, 250.0),
            texture_contrast: Range::new(0.15, 0.6),
            max_primitives: 3,
            primitive_radius_m: Range::new(0.002, 0.006),
            depth_range_m: Range::new(0.04, 0.12),
            master_seed: 0,
        }
    }
}

pub const MAX_ATTEMPTS: usize = 100;
const HEIGHTFIELD_SPACING: f64 = 0.001;
const SURFACE_WAVES: usize = 10;

impl RandomizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        self.baseline_m.check("baseline_m", 0.002, 0.008)?;
        self.focal_px.check("focal_px", 1.0, 1e5)?;
        self.base_depth_m.check("base_depth_m", 0.0, 1.0)?;
        self.heightfield_amplitude_m.check("heightfield_amplitude_m", 0.0, 0.05)?;
        self.heightfield_wavelength_m.check("heightfield_wavelength_m", 0.002, 1.0)?;
        self.light_intensity.check("light_intensity", 0.0, 10.0)?;
        self.ambient.check("ambient", 0.0, 1.0)?;
        self.texture_frequency.check("texture_frequency", 0.0, 1e4)?;
        self.texture_contrast.check("texture_contrast", 0.0, 1.0)?;
        self.primitive_radius_m.check("primitive_radius_m", 1e-4, 0.05)?;
        self.depth_range_m.check("depth_range_m", 1e-3, 10.0)?;
        for (name, v, hi) in [
            ("aspect_jitter", self.aspect_jitter, 0.5),
            ("principal_jitter_px", self.principal_jitter_px, self.width.min(self.height) as f64 / 4.0),
            ("extrinsic_jitter_deg", self.extrinsic_jitter_deg, 10.0),
            ("rig_rotation_deg", self.rig_rotation_deg, 45.0),
            ("rig_translation_m", self.rig_translation_m, 0.1),
            ("light_offset_m", self.light_offset_m, 0.1),
        ] {
            if !(v >= 0.0 && v <= hi) {
                return Err(Error::Config(format!("{name} = {v} outside [0, {hi}]")));
            }
        }
        if self.base_depth_m.min - self.heightfield_amplitude_m.max < self.depth_range_m.min
            || self.base_depth_m.max + self.heightfield_amplitude_m.max > self.depth_range_m.max
        {
            return Err(Error::Config(
                "base depth ± amplitude leaves the working depth range".into(),
            ));
        }
        Ok(())
    }

    /// Per-index RNG; independent of evaluation order.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(index);
        rng
    }
}

/// Draws the scene and rig for `index`; a pure function of `(master_seed, index)`.
pub fn sample_scene(config: &RandomizationConfig, index: u64) -> Result<(SceneSpec, StereoRig)> {
    config.validate()?;
    let mut rng = config.rng_for(index);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let (scene, rig) = draw(config, &mut rng);
        match check_frustum(config, &scene, &rig) {
            Ok(()) => return Ok((scene, rig)),
            Err(detail) => last = detail,
        }
    }
    Err(Error::FrustumContainment {
        index,
        attempts: MAX_ATTEMPTS,
        detail: last,
    })
}

fn draw(config: &RandomizationConfig, rng: &mut ChaCha8Rng) -> (SceneSpec, StereoRig) {
    let (w, h) = (config.width as f64, config.height as f64);
    let focal = config.focal_px.sample(rng);
    let mut intr = || {
        let aspect = 1.0 + rng.random_range(-1.0..=1.0) * config.aspect_jitter;
        let j = config.principal_jitter_px;
        Intrinsics {
            fx: focal,
            fy: focal * aspect,
            cx: w / 2.0 + rng.random_range(-1.0..=1.0) * j,
            cy: h / 2.0 + rng.random_range(-1.0..=1.0) * j,
        }
    };
    let left = intr();
    let right = intr();
    let baseline = config.baseline_m.sample(rng);
    let rel_rot = random_small_rotation(rng, config.extrinsic_jitter_deg.to_radians());
    let rig = StereoRig {
        left,
        right,
        baseline,
        pose_right_in_left: Pose {
            rotation: rel_rot,
            translation: Vector3::new(baseline, 0.0, 0.0),
        },
        width: config.width,
        height: config.height,
    };

    let rig_pose = Pose {
        rotation: random_small_rotation(rng, config.rig_rotation_deg.to_radians()),
        translation: Vector3::new(
            rng.random_range(-1.0..=1.0) * config.rig_translation_m,
            rng.random_range(-1.0..=1.0) * config.rig_translation_m,
            rng.random_range(-1.0..=1.0) * config.rig_translation_m,
        ),
    };

    let base_depth = config.base_depth_m.sample(rng);
    let amplitude = config.heightfield_amplitude_m.sample(rng);
    // Patch wide enough for the widest field of view at the far depth.
    let half = 0.5 * w.max(h) / config.focal_px.min * config.depth_range_m.max * 1.6 + 0.02;
    let n = (2.0 * half / HEIGHTFIELD_SPACING).ceil() as usize + 1;
    let mut hf = Heightfield::flat([-half, -half], HEIGHTFIELD_SPACING, n, n, base_depth);
    if amplitude > 0.0 {
        let waves: Vec<(f64, f64, f64, f64)> = (0..SURFACE_WAVES)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let lambda = config.heightfield_wavelength_m.sample(rng);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let weight = rng.random_range(0.3..1.0);
                (theta, lambda, phase, weight)
            })
            .collect();
        let total: f64 = waves.iter().map(|w| w.3).sum();
        for j in 0..n {
            for i in 0..n {
                let x = hf.origin[0] + HEIGHTFIELD_SPACING * i as f64;
                let y = hf.origin[1] + HEIGHTFIELD_SPACING * j as f64;
                let v: f64 = waves
                    .iter()
                    .map(|&(th, lam, ph, wt)| {
                        wt * (std::f64::consts::TAU / lam * (th.cos() * x + th.sin() * y) + ph).sin()
                    })
                    .sum();
                hf.heights[j * n + i] = amplitude * v / total;
            }
        }
    }

    let tissue = [
        rng.random_range(0.65..0.95),
        rng.random_range(0.25..0.5),
        rng.random_range(0.2..0.45),
    ];
    let vein = [
        rng.random_range(0.35..0.6),
        rng.random_range(0.05..0.2),
        rng.random_range(0.05..0.25),
    ];
    let texture = Texture {
        base_color: tissue,
        vein_color: vein,
        contrast: config.texture_contrast.sample(rng),
        waves: (0..4)
            .map(|_| {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                Wave {
                    direction: [theta.cos(), theta.sin()],
                    frequency: config.texture_frequency.sample(rng),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect(),
    };

    let off = config.light_offset_m;
    let light_cam = Vector3::new(
        rng.random_range(-off..=off),
        rng.random_range(-off..=off),
        rng.random_range(-off..=0.0),
    );
    let light = Light {
        position: rig_pose.transform_point(&light_cam).into(),
        intensity: config.light_intensity.sample(rng),
    };
    let ambient = config.ambient.sample(rng);

    let mut scene = SceneSpec {
        rig_pose,
        heightfield: hf,
        primitives: Vec::new(),
        texture,
        light,
        ambient,
    };
    let count = rng.random_range(0..=config.max_primitives);
    for _ in 0..count {
        let radius = config.primitive_radius_m.sample(rng);
        let px = Vector2::new(rng.random_range(0.2..0.8) * w, rng.random_range(0.2..0.8) * h);
        let dir = rig_pose.transform_vector(&rig.ray_direction(&px, Camera::Left));
        let origin = rig_pose.translation;
        let Some(hit) = scene.caster().cast_surface(&origin, &dir) else {
            continue;
        };
        let ground = origin + dir * hit.t;
        let albedo = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        if rng.random_bool(0.5) {
            let c = ground + hit.normal * (0.5 * radius);
            scene.primitives.push(Primitive::Sphere {
                center: c.into(),
                radius,
                albedo,
            });
        } else {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let len = rng.random_range(2.0..5.0) * radius;
            let axis = Vector3::new(theta.cos(), theta.sin(), 0.0) * (0.5 * len);
            let c = ground + hit.normal * (0.5 * radius);
            scene.primitives.push(Primitive::Capsule {
                a: (c - axis).into(),
                b: (c + axis).into(),
                radius: radius * 0.5,
                albedo,
            });
        }
    }
    (scene, rig)
}

/// Every probe ray of both cameras must hit the surface patch inside the working depth range.
pub(crate) fn check_frustum(
    config: &RandomizationConfig,
    scene: &SceneSpec,
    rig: &StereoRig,
) -> std::result::Result<(), String> {
    const PROBES: usize = 9;
    let (w, h) = (rig.width as f64, rig.height as f64);
    let caster = scene.caster();
    for cam in [Camera::Left, Camera::Right] {
        let cam_pose = scene.rig_pose.compose(&rig.camera_pose(cam));
        for a in 0..PROBES {
            for b in 0..PROBES {
                let px = Vector2::new(w * a as f64 / (PROBES - 1) as f64, h * b as f64 / (PROBES - 1) as f64);
                let d_cam = rig.ray_direction(&px, cam);
                let d = cam_pose.transform_vector(&d_cam);
                match caster.cast_surface(&cam_pose.translation, &d) {
                    Some(hit) if config.depth_range_m.contains(hit.t) => {}
                    Some(hit) => {
                        return Err(format!("{cam:?} ray at {px:?} hits depth {:.4} m outside range", hit.t))
                    }
                    None => return Err(format!("{cam:?} ray at {px:?} leaves the surface patch")),
                }
            }
        }
    }
    Ok(())
}
