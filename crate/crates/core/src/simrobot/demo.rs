use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Region, SimConfig, Task};
use super::expert::scripted_expert;
use super::world::WorldState;
use crate::error::{Error, Result};
use crate::geom::{relative_action, ActionStep, ArmState, DualArmState, Pose};
use crate::policy::TrainingEpisode;
use crate::scenegen::{read_json, read_png, write_json, write_png};

/// Extra expert seeds tried per requested demo before giving up.
const MAX_EXPERT_RETRIES: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPoses {
    pub left: Pose,
    pub right: Pose,
}

/// One line of `states.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub measured: ArmPoses,
    pub jaws: [f64; 2],
    /// Executed action from `t` to `t + 1`; absent on the final state.
    pub action: Option<Vec<f64>>,
    /// Ground-truth poses, for debugging only.
    pub true_poses: ArmPoses,
}

impl StepRecord {
    pub fn measured_state(&self) -> DualArmState {
        DualArmState {
            left: ArmState {
                pose: self.measured.left,
                jaw: self.jaws[0],
            },
            right: ArmState {
                pose: self.measured.right,
                jaw: self.jaws[1],
            },
        }
    }

    pub fn true_state(&self) -> DualArmState {
        DualArmState {
            left: ArmState {
                pose: self.true_poses.left,
                jaw: self.jaws[0],
            },
            right: ArmState {
                pose: self.true_poses.right,
                jaw: self.jaws[1],
            },
        }
    }

    pub fn executed(&self) -> Result<Option<ActionStep>> {
        self.action.as_deref().map(ActionStep::from_slice).transpose()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoMeta {
    pub task: Task,
    pub region: Region,
    pub seed: u64,
    pub index: u64,
    /// Number of executed actions `T`; there are `T + 1` frames.
    pub length: usize,
    pub success: bool,
    /// Debug only.
    pub kinematic_error: [Pose; 2],
    pub code_version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoManifest {
    pub task: Task,
    pub seed: u64,
    pub train: usize,
    pub wide: usize,
    pub demos: Vec<String>,
    pub skipped_indices: Vec<u64>,
    pub config: SimConfig,
    pub code_version: String,
}

/// A rolled-out episode held in memory.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub meta: DemoMeta,
    pub records: Vec<StepRecord>,
    pub frames: Vec<(image::RgbImage, image::RgbImage)>,
}

fn record(state: &WorldState, action: Option<&ActionStep>) -> StepRecord {
    let m = state.measured();
    StepRecord {
        t: state.t,
        measured: ArmPoses {
            left: m.left.pose,
            right: m.right.pose,
        },
        jaws: [m.left.jaw, m.right.jaw],
        action: action.map(|a| a.to_array().to_vec()),
        true_poses: ArmPoses {
            left: state.arms.left.pose,
            right: state.arms.right.pose,
        },
    }
}

/// Runs the scripted expert until success or the horizon.
pub fn expert_rollout(world: WorldState, render: bool) -> Result<Rollout> {
    let horizon = world.config.horizon;
    let mut state = world;
    let mut records = Vec::new();
    let mut frames = Vec::new();
    loop {
        if render {
            frames.push(state.render());
        }
        if state.task.success || state.t >= horizon {
            records.push(record(&state, None));
            break;
        }
        let (next, exec) = state.step(&scripted_expert(&state))?;
        records.push(record(&state, Some(&exec)));
        state = next;
    }
    let meta = DemoMeta {
        task: state.task.task,
        region: state.region,
        seed: state.seed,
        index: state.index,
        length: records.len() - 1,
        success: state.task.success,
        kinematic_error: state.kinematic_error,
        code_version: crate::CODE_VERSION.to_string(),
    };
    Ok(Rollout { meta, records, frames })
}

fn frame_paths(dir: &Path, t: usize) -> (PathBuf, PathBuf) {
    let frames = dir.join("frames");
    (frames.join(format!("{t:06}_left.png")), frames.join(format!("{t:06}_right.png")))
}

pub fn write_demo(rollout: &Rollout, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("meta.json"), &rollout.meta)?;
    let path = dir.join("states.jsonl");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for r in &rollout.records {
        let line = serde_json::to_string(r).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    for (t, (l, r)) in rollout.frames.iter().enumerate() {
        let (pl, pr) = frame_paths(dir, t);
        write_png(l, &pl)?;
        write_png(r, &pr)?;
    }
    Ok(())
}

pub fn read_states(path: &Path) -> Result<Vec<StepRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?);
    }
    Ok(out)
}

/// Reads a demo; frames are loaded only when `with_frames` is set.
pub fn read_demo(dir: &Path, with_frames: bool) -> Result<Rollout> {
    let meta: DemoMeta = read_json(&dir.join("meta.json"))?;
    let records = read_states(&dir.join("states.jsonl"))?;
    if records.len() != meta.length + 1 {
        return Err(Error::DimensionMismatch {
            path: dir.join("states.jsonl"),
            detail: format!("{} state lines, meta length {} needs {}", records.len(), meta.length, meta.length + 1),
        });
    }
    let mut frames = Vec::new();
    if with_frames {
        for t in 0..records.len() {
            let (pl, pr) = frame_paths(dir, t);
            frames.push((read_png(&pl)?, read_png(&pr)?));
        }
    }
    Ok(Rollout { meta, records, frames })
}

/// Policy training view of a demo: frames plus measured states.
pub fn load_training_episode(dir: &Path) -> Result<TrainingEpisode> {
    let demo = read_demo(dir, true)?;
    Ok(TrainingEpisode {
        frames: demo.frames,
        measured: demo.records.iter().map(StepRecord::measured_state).collect(),
    })
}

pub fn list_demos(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("states.jsonl").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Largest deviation between the stored executed actions and those
/// recomputed from consecutive measured states, after undoing the
/// kinematic-error rotation on the translation part. Rotation deltas and
/// jaws compare directly.
pub fn action_consistency(rollout: &Rollout) -> Result<f64> {
    let mut worst = 0.0f64;
    for w in rollout.records.windows(2) {
        let stored = w[0]
            .executed()?
            .ok_or_else(|| Error::Shape(format!("missing action at t={}", w[0].t)))?;
        let recomputed = relative_action(&w[0].measured_state(), &w[1].measured_state());
        let mut expected = stored;
        for side in 0..2 {
            let e = &rollout.meta.kinematic_error[side];
            expected.set_arm(side, e.rotation * stored.translation(side), stored.euler(side), stored.jaw(side));
        }
        for (a, b) in recomputed.to_array().iter().zip(expected.to_array()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// `train` demos from the training region, then `wide` from the wide one.
/// Expert failures are skipped and replaced by later episode indices.
pub fn collect_demos(config: &SimConfig, task: Task, train: usize, wide: usize, seed: u64, out: &Path) -> Result<DemoManifest> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut demos = Vec::new();
    let mut skipped = Vec::new();
    let mut index = 0u64;
    for (region, count) in [(Region::Train, train), (Region::Wide, wide)] {
        let mut done = 0;
        let mut failures = 0;
        while done < count {
            let world = WorldState::setup(config, task, region, seed, index);
            let ok = match world {
                Ok(w) => {
                    let roll = expert_rollout(w, true)?;
                    if roll.meta.success {
                        let name = format!("{index:06}");
                        write_demo(&roll, &out.join(&name))?;
                        demos.push(name);
                        true
                    } else {
                        false
                    }
                }
                Err(Error::Unreachable(_)) => false,
                Err(e) => return Err(e),
            };
            if ok {
                done += 1;
            } else {
                skipped.push(index);
                failures += 1;
                if failures > MAX_EXPERT_RETRIES + count as u64 {
                    return Err(Error::Unreachable(format!("expert failed {failures} times in region {region}")));
                }
            }
            index += 1;
        }
    }
    let manifest = DemoManifest {
        task,
        seed,
        train,
        wide,
        demos,
        skipped_indices: skipped,
        config: config.clone(),
        code_version: crate::CODE_VERSION.to_string(),
    };
    write_json(&out.join("demos.json"), &manifest)?;
    Ok(manifest)
}
