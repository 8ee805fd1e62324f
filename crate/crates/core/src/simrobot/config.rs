use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::{RandomizationConfig, Range};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Left arm grasps the peg and lifts it.
    Lift,
    /// Left arm touches its target, then the right arm touches its own.
    DualTouch,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lift" => Ok(Self::Lift),
            "dual-touch" => Ok(Self::DualTouch),
            other => Err(Error::Config(format!("unknown task {other:?} (lift, dual-touch)"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lift => "lift",
            Self::DualTouch => "dual-touch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Train,
    Wide,
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "wide" => Ok(Self::Wide),
            other => Err(Error::Config(format!("unknown region {other:?} (train, wide)"))),
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Wide => "wide",
        })
    }
}

/// Axis-aligned box over camera-frame `x, y` (meters) for target placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub x: Range,
    pub y: Range,
}

impl RegionBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x.contains(x) && self.y.contains(y)
    }

    pub fn contains_box(&self, other: &RegionBox) -> bool {
        self.x.min <= other.x.min && self.x.max >= other.x.max && self.y.min <= other.y.min && self.y.max >= other.y.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Scene randomization for the robot workspace. Keys given in a file
    /// override [`robot_scene`], not the generic scene defaults.
    #[serde(deserialize_with = "scene_overrides")]
    pub scene: RandomizationConfig,
    pub horizon: usize,
    pub grasp_radius_m: f64,
    pub lift_height_m: f64,
    pub close_threshold: f64,
    pub jaw_max: f64,
    pub max_translation_step_m: f64,
    pub max_rotation_step_rad: f64,
    pub kinematic_error_rotation_deg: f64,
    pub kinematic_error_translation_m: f64,
    pub train_region: RegionBox,
    pub wide_region: RegionBox,
    /// Tool positions must stay within this box (camera frame, meters).
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub peg_radius_m: f64,
    pub touch_target_radius_m: f64,
}

/// Workspace scenes: untilted rig, no clutter, a shallower depth band.
pub fn robot_scene() -> RandomizationConfig {
    RandomizationConfig {
        rig_rotation_deg: 0.0,
        rig_translation_m: 0.0,
        max_primitives: 0,
        base_depth_m: Range::new(0.065, 0.08),
        heightfield_amplitude_m: Range::new(0.002, 0.006),
        focal_px: Range::new(85.0, 100.0),
        ..Default::default()
    }
}

fn scene_overrides<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<RandomizationConfig, D::Error> {
    use serde::de::Error as _;
    let given = serde_json::Value::deserialize(d)?;
    let serde_json::Value::Object(given) = given else {
        return Err(D::Error::custom("scene must be a table"));
    };
    let mut base = serde_json::to_value(robot_scene()).map_err(D::Error::custom)?;
    let obj = base.as_object_mut().expect("struct serializes to an object");
    for (k, v) in given {
        obj.insert(k, v);
    }
    serde_json::from_value(base).map_err(D::Error::custom)
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene: robot_scene(),
            horizon: 120,
            grasp_radius_m: 0.002,
            lift_height_m: 0.010,
            close_threshold: 0.2,
            jaw_max: 1.0,
            max_translation_step_m: 0.0015,
            max_rotation_step_rad: 0.05,
            kinematic_error_rotation_deg: 5.0,
            kinematic_error_translation_m: 0.005,
            train_region: RegionBox {
                x: Range::new(-0.006, 0.006),
                y: Range::new(-0.004, 0.006),
            },
            wide_region: RegionBox {
                x: Range::new(-0.014, 0.014),
                y: Range::new(-0.010, 0.012),
            },
            workspace_min: [-0.03, -0.03, 0.035],
            workspace_max: [0.03, 0.03, 0.1],
            peg_radius_m: 0.0025,
            touch_target_radius_m: 0.002,
        }
    }
}

impl SimConfig {
    pub fn region(&self, r: Region) -> &RegionBox {
        match r {
            Region::Train => &self.train_region,
            Region::Wide => &self.wide_region,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if !self.wide_region.contains_box(&self.train_region) {
            return Err(Error::Config("train region must lie inside the wide region".into()));
        }
        if self.scene.rig_rotation_deg != 0.0 || self.scene.rig_translation_m != 0.0 {
            return Err(Error::Config("robot scenes use the left camera as world frame (no rig jitter)".into()));
        }
        for (name, v) in [
            ("grasp_radius_m", self.grasp_radius_m),
            ("lift_height_m", self.lift_height_m),
            ("jaw_max", self.jaw_max),
            ("max_translation_step_m", self.max_translation_step_m),
            ("max_rotation_step_rad", self.max_rotation_step_rad),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..self.jaw_max).contains(&self.close_threshold) || self.horizon == 0 {
            return Err(Error::Config("close_threshold must be in [0, jaw_max) and horizon positive".into()));
        }
        Ok(())
    }
}
