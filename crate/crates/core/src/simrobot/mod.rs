//! Kinematic dual-arm simulator with a stereo endoscope, scripted expert,
//! demo recording and closed-loop evaluation.

mod config;
mod demo;
mod eval;
mod expert;
mod world;

pub use config::{robot_scene, Region, RegionBox, SimConfig, Task};
pub use demo::{
    action_consistency, collect_demos, expert_rollout, list_demos, load_training_episode, read_demo, read_states,
    write_demo, ArmPoses, DemoManifest, DemoMeta, Rollout, StepRecord,
};
pub use eval::{evaluate, EVAL_FIRST_INDEX, run_episode, Driver, EpisodeLog, EvalReport};
pub use expert::scripted_expert;
pub use world::{absolute_command_result, sample_kinematic_error, TaskState, WorldState};

#[cfg(test)]
mod tests;
