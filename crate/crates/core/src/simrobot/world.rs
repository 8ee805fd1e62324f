use std::sync::Arc;

use image::RgbImage;
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Region, SimConfig, Task};
use crate::error::{Error, Result};
use crate::geom::{apply_action, random_in_ball, random_small_rotation, ActionStep, ArmState, Camera, DualArmState, Pose, StereoRig};
use crate::scenegen::{render_view, sample_scene, Primitive, SceneSpec};

const TOOL_SHAFT_M: f64 = 0.04;
const TOOL_RADIUS_M: f64 = 0.0012;
const FINGER_M: f64 = 0.0035;
const FINGER_RADIUS_M: f64 = 0.0005;
const FINGER_SPREAD_RAD: f64 = 0.9;
const TOOL_COLORS: [[f64; 3]; 2] = [[0.78, 0.78, 0.82], [0.55, 0.6, 0.72]];
const PEG_COLOR: [f64; 3] = [0.15, 0.8, 0.25];
const TOUCH_COLORS: [[f64; 3]; 2] = [[0.9, 0.85, 0.1], [0.15, 0.35, 0.9]];
const MIN_TARGET_SEPARATION_M: f64 = 0.006;

/// Home tip positions (camera frame) and tool pointing directions.
fn home(side: usize) -> ArmState {
    let s = if side == 0 { -1.0 } else { 1.0 };
    let dir = Vector3::new(-0.35 * s, 0.25, 0.9).normalize();
    let rotation = Rotation3::rotation_between(&Vector3::z(), &dir)
        .expect("non-antiparallel")
        .into_inner();
    ArmState {
        pose: Pose {
            rotation,
            translation: Vector3::new(0.014 * s, -0.012, 0.05),
        },
        jaw: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub task: Task,
    /// Lift: the peg center. Dual-touch: one target per arm.
    pub targets: Vec<[f64; 3]>,
    pub peg_start: [f64; 3],
    pub grasped: bool,
    pub grasp_offset: [f64; 3],
    pub touched: [bool; 2],
    pub success: bool,
}

/// Full simulator state. Arm poses are true poses in the left-camera frame;
/// the robot reports `kinematic_error ∘ true`.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub config: Arc<SimConfig>,
    pub scene: Arc<SceneSpec>,
    pub rig: StereoRig,
    pub arms: DualArmState,
    pub kinematic_error: [Pose; 2],
    pub task: TaskState,
    pub region: Region,
    pub seed: u64,
    pub index: u64,
    pub t: usize,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Per-episode RNG, separate from the scene stream.
fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e915_0de5);
    rng.set_stream(index);
    rng
}

pub fn sample_kinematic_error<R: Rng + ?Sized>(rng: &mut R, config: &SimConfig) -> Pose {
    Pose {
        rotation: random_small_rotation(rng, config.kinematic_error_rotation_deg.to_radians()),
        translation: random_in_ball(rng, config.kinematic_error_translation_m),
    }
}

impl WorldState {
    /// Episode `index` of the stream `seed`: scene, targets in `region` and
    /// a fresh kinematic error per arm.
    pub fn setup(config: &SimConfig, task: Task, region: Region, seed: u64, index: u64) -> Result<Self> {
        config.validate()?;
        let mut scene_cfg = config.scene.clone();
        scene_cfg.master_seed = seed;
        let (scene, rig) = sample_scene(&scene_cfg, index)?;
        let mut rng = episode_rng(seed, index);
        let bounds = config.region(region);
        let on_surface = |rng: &mut ChaCha8Rng, lift: f64| -> Result<Vector3<f64>> {
            let (x, y) = (bounds.x.sample(rng), bounds.y.sample(rng));
            let (z, _) = scene
                .heightfield
                .sample(x, y)
                .ok_or_else(|| Error::Unreachable(format!("target ({x:.4}, {y:.4}) outside the surface patch")))?;
            Ok(Vector3::new(x, y, z - lift))
        };
        let targets = match task {
            Task::Lift => vec![on_surface(&mut rng, config.peg_radius_m)?],
            Task::DualTouch => {
                let a = on_surface(&mut rng, config.touch_target_radius_m)?;
                let mut b = on_surface(&mut rng, config.touch_target_radius_m)?;
                let mut tries = 0;
                while (a - b).xy().norm() < MIN_TARGET_SEPARATION_M {
                    tries += 1;
                    if tries > 100 {
                        return Err(Error::Unreachable("cannot separate the two touch targets".into()));
                    }
                    b = on_surface(&mut rng, config.touch_target_radius_m)?;
                }
                // Left arm takes the target on its side.
                if a.x <= b.x {
                    vec![a, b]
                } else {
                    vec![b, a]
                }
            }
        };
        for t in &targets {
            let inside = (0..3).all(|k| t[k] >= config.workspace_min[k] && t[k] <= config.workspace_max[k]);
            if !inside {
                return Err(Error::Unreachable(format!("target {:?} outside the workspace", t.as_slice())));
            }
        }
        let kinematic_error = [sample_kinematic_error(&mut rng, config), sample_kinematic_error(&mut rng, config)];
        let targets: Vec<[f64; 3]> = targets.iter().map(|t| [t.x, t.y, t.z]).collect();
        Ok(Self {
            config: Arc::new(config.clone()),
            scene: Arc::new(scene),
            rig,
            arms: DualArmState {
                left: home(0),
                right: home(1),
            },
            kinematic_error,
            task: TaskState {
                task,
                peg_start: targets[0],
                targets,
                grasped: false,
                grasp_offset: [0.0; 3],
                touched: [false; 2],
                success: false,
            },
            region,
            seed,
            index,
            t: 0,
        })
    }

    /// Reported arm state: `kinematic_error ∘ true` per arm.
    pub fn measured(&self) -> DualArmState {
        let mut m = self.arms;
        for side in 0..2 {
            m.arm_mut(side).pose = self.kinematic_error[side].compose(&self.arms.arm(side).pose);
        }
        m
    }

    pub fn tip(&self, side: usize) -> Vector3<f64> {
        self.arms.arm(side).pose.translation
    }

    /// Distance from each arm's tip to the target it must reach.
    pub fn target_distance(&self) -> f64 {
        match self.task.task {
            Task::Lift => {
                if self.task.grasped {
                    let lifted = self.task.peg_start[2] - self.task.targets[0][2];
                    (self.config.lift_height_m - lifted).max(0.0)
                } else {
                    (self.tip(0) - v3(self.task.targets[0])).norm()
                }
            }
            Task::DualTouch => (0..2)
                .filter(|s| !self.task.touched[*s])
                .map(|s| (self.tip(s) - v3(self.task.targets[s])).norm())
                .fold(0.0, f64::max),
        }
    }

    /// Bounds a commanded action to the per-step limits.
    pub fn clamp_action(&self, a: &ActionStep) -> ActionStep {
        let c = &self.config;
        let mut out = *a;
        for side in 0..2 {
            let mut dt = a.translation(side);
            let n = dt.norm();
            if n > c.max_translation_step_m {
                dt *= c.max_translation_step_m / n;
            }
            let mut de = a.euler(side);
            let n = de.norm();
            if n > c.max_rotation_step_rad {
                de *= c.max_rotation_step_rad / n;
            }
            out.set_arm(side, dt, de, a.jaw(side).clamp(0.0, c.jaw_max));
        }
        out
    }

    /// Advances one step; returns the new state and the executed (clamped) action.
    pub fn step(&self, action: &ActionStep) -> Result<(WorldState, ActionStep)> {
        if !action.is_finite() {
            return Err(Error::NonFiniteAction);
        }
        let exec = self.clamp_action(action);
        let mut next = self.clone();
        next.arms = apply_action(&self.arms, &exec);
        next.t += 1;
        let c = &self.config;
        let task = &mut next.task;
        match task.task {
            Task::Lift => {
                let tip = next.arms.left.pose.translation;
                let closed = next.arms.left.jaw < c.close_threshold;
                if !task.grasped && closed && (tip - v3(task.targets[0])).norm() <= c.grasp_radius_m {
                    task.grasped = true;
                    let off = v3(task.targets[0]) - tip;
                    task.grasp_offset = [off.x, off.y, off.z];
                } else if task.grasped && !closed {
                    task.grasped = false;
                }
                if task.grasped {
                    let p = tip + v3(task.grasp_offset);
                    task.targets[0] = [p.x, p.y, p.z];
                }
                if task.grasped && task.peg_start[2] - task.targets[0][2] >= c.lift_height_m {
                    task.success = true;
                }
            }
            Task::DualTouch => {
                for side in 0..2 {
                    let tip = next.arms.arm(side).pose.translation;
                    if (tip - v3(task.targets[side])).norm() <= c.grasp_radius_m {
                        task.touched[side] = true;
                    }
                }
                if task.touched[0] && task.touched[1] {
                    task.success = true;
                }
            }
        }
        Ok((next, exec))
    }

    /// Instruments and task objects as ray-castable primitives.
    pub fn primitives(&self) -> Vec<Primitive> {
        let mut prims = Vec::new();
        for side in 0..2 {
            let arm = self.arms.arm(side);
            let r = &arm.pose.rotation;
            let tip = arm.pose.translation;
            let back = tip - r * Vector3::z() * TOOL_SHAFT_M;
            prims.push(Primitive::Capsule {
                a: tip.into(),
                b: back.into(),
                radius: TOOL_RADIUS_M,
                albedo: TOOL_COLORS[side],
            });
            let half = 0.5 * FINGER_SPREAD_RAD * arm.jaw;
            for s in [-1.0, 1.0] {
                let dir = r * Vector3::new(s * half.sin(), 0.0, half.cos());
                prims.push(Primitive::Capsule {
                    a: tip.into(),
                    b: (tip + dir * FINGER_M).into(),
                    radius: FINGER_RADIUS_M,
                    albedo: TOOL_COLORS[side],
                });
            }
        }
        match self.task.task {
            Task::Lift => prims.push(Primitive::Sphere {
                center: self.task.targets[0],
                radius: self.config.peg_radius_m,
                albedo: PEG_COLOR,
            }),
            Task::DualTouch => {
                for (side, t) in self.task.targets.iter().enumerate() {
                    prims.push(Primitive::Sphere {
                        center: *t,
                        radius: self.config.touch_target_radius_m,
                        albedo: TOUCH_COLORS[side],
                    });
                }
            }
        }
        prims
    }

    /// Stereo observation rendered from the true state.
    pub fn render(&self) -> (RgbImage, RgbImage) {
        let mut scene = (*self.scene).clone();
        scene.primitives.extend(self.primitives());
        let caster = scene.caster();
        let (left, _) = render_view(&scene, &caster, &self.rig, Camera::Left);
        let (right, _) = render_view(&scene, &caster, &self.rig, Camera::Right);
        (left, right)
    }
}

/// True arm state that results from commanding the absolute *measured*
/// target `target` on a robot with kinematic error `error`.
pub fn absolute_command_result(error: &[Pose; 2], target: &DualArmState) -> DualArmState {
    let mut out = *target;
    for side in 0..2 {
        out.arm_mut(side).pose = error[side].inverse().compose(&target.arm(side).pose);
    }
    out
}
