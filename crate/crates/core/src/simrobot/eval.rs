use std::io::Write;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use super::config::{Region, SimConfig, Task};
use super::expert::scripted_expert;
use super::world::WorldState;
use crate::error::{Error, Result};
use crate::geom::{ActionStep, Pose};
use crate::geotrans::GeoModel;
use crate::policy::{PolicyAgent, PolicyModel};

/// Evaluation scenes start here so they never coincide with demo episodes
/// drawn from the same seed.
pub const EVAL_FIRST_INDEX: u64 = 1 << 32;

pub enum Driver<'a> {
    Expert,
    Policy { geo: &'a GeoModel, policy: &'a PolicyModel },
    /// Full-length random translations with random jaws.
    Random,
}

impl Driver<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Expert => "expert",
            Self::Policy { .. } => "policy",
            Self::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub index: u64,
    pub seed: u64,
    pub task: Task,
    pub region: Region,
    pub driver: String,
    pub success: bool,
    pub steps: usize,
    pub kinematic_error_rotation_deg: [f64; 2],
    pub kinematic_error_translation_m: [f64; 2],
    pub final_target_distance_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub region: Region,
    pub driver: String,
    pub seed: u64,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub code_version: String,
}

fn rotation_angle_deg(p: &Pose) -> f64 {
    (((p.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0)).acos().to_degrees()
}

fn random_action<R: Rng>(rng: &mut R, config: &SimConfig) -> ActionStep {
    let mut a = ActionStep::default();
    for side in 0..2 {
        let d: [f64; 3] = UnitSphere.sample(rng);
        let dt = Vector3::from(d) * config.max_translation_step_m;
        a.set_arm(side, dt, Vector3::zeros(), rng.random_range(0.0..=config.jaw_max));
    }
    a
}

/// Runs one closed-loop episode. Observations are rendered from the true
/// state; the driver only sees images and measured poses.
pub fn run_episode(world: WorldState, driver: &Driver<'_>, rng: &mut ChaCha8Rng) -> Result<WorldState> {
    let horizon = world.config.horizon;
    let mut state = world;
    let mut agent = match driver {
        Driver::Policy { geo, policy } => Some(PolicyAgent::new(geo, policy)),
        _ => None,
    };
    while !state.task.success && state.t < horizon {
        let action = match driver {
            Driver::Expert => scripted_expert(&state),
            Driver::Random => random_action(rng, &state.config),
            Driver::Policy { .. } => {
                let (l, r) = state.render();
                agent.as_mut().expect("agent").act(&l, &r, &state.measured())?
            }
        };
        state = state.step(&action)?.0;
    }
    Ok(state)
}

/// Success rate over `episodes` fresh scenes of stream `seed`, each with a
/// freshly drawn kinematic error. One JSON line per episode goes to `log`.
pub fn evaluate(
    config: &SimConfig,
    driver: &Driver<'_>,
    task: Task,
    region: Region,
    episodes: usize,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<EvalReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e7a_1d71_7e2);
    let mut successes = 0;
    let mut done = 0;
    let mut index = EVAL_FIRST_INDEX;
    while done < episodes {
        let world = match WorldState::setup(config, task, region, seed, index) {
            Ok(w) => w,
            Err(Error::Unreachable(_)) => {
                index += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let kin = world.kinematic_error;
        let end = run_episode(world, driver, &mut rng)?;
        successes += end.task.success as usize;
        if let Some(w) = log.as_deref_mut() {
            let entry = EpisodeLog {
                episode: done,
                index,
                seed,
                task,
                region,
                driver: driver.name().to_string(),
                success: end.task.success,
                steps: end.t,
                kinematic_error_rotation_deg: [rotation_angle_deg(&kin[0]), rotation_angle_deg(&kin[1])],
                kinematic_error_translation_m: [kin[0].translation.norm(), kin[1].translation.norm()],
                final_target_distance_m: end.target_distance(),
            };
            let line = serde_json::to_string(&entry).map_err(|e| Error::Json {
                path: "<episode log>".into(),
                source: e,
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io("<episode log>", e))?;
        }
        done += 1;
        index += 1;
    }
    Ok(EvalReport {
        task,
        region,
        driver: driver.name().to_string(),
        seed,
        episodes,
        successes,
        success_rate: if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 },
        code_version: crate::CODE_VERSION.to_string(),
    })
}
