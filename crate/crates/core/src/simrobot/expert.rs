use nalgebra::Vector3;

use super::config::Task;
use super::world::WorldState;
use crate::geom::ActionStep;

const GAIN: f64 = 0.5;
const HOVER_M: f64 = 0.006;
const ALIGN_M: f64 = 0.0005;
const CLOSE_M: f64 = 0.0005;
const LIFT_MARGIN_M: f64 = 0.002;

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Proportional step toward `goal`, kept strictly inside the step limit.
fn toward(tip: Vector3<f64>, goal: Vector3<f64>, max_step: f64) -> Vector3<f64> {
    let d = (goal - tip) * GAIN;
    let n = d.norm();
    let cap = max_step * (1.0 - 1e-9);
    if n > cap {
        d * (cap / n)
    } else {
        d
    }
}

/// Scripted controller acting on the true state. Issues zero rotation
/// deltas and never exceeds the per-step limits.
pub fn scripted_expert(state: &WorldState) -> ActionStep {
    let c = &state.config;
    let open = c.jaw_max;
    let mut a = ActionStep::hold(state.arms.left.jaw, state.arms.right.jaw);
    let zero = Vector3::zeros();
    match state.task.task {
        Task::Lift => {
            a.set_arm(1, zero, zero, open);
            let tip = state.tip(0);
            let peg = v3(state.task.targets[0]);
            if state.task.success {
                a.set_arm(0, zero, zero, 0.0);
            } else if state.task.grasped {
                let goal = v3(state.task.peg_start) - Vector3::z() * (c.lift_height_m + LIFT_MARGIN_M) - v3(state.task.grasp_offset);
                a.set_arm(0, toward(tip, goal, c.max_translation_step_m), zero, 0.0);
            } else if (tip - peg).xy().norm() > ALIGN_M {
                let goal = peg - Vector3::z() * HOVER_M;
                a.set_arm(0, toward(tip, goal, c.max_translation_step_m), zero, open);
            } else {
                let jaw = if (tip - peg).norm() < CLOSE_M { 0.0 } else { open };
                a.set_arm(0, toward(tip, peg, c.max_translation_step_m), zero, jaw);
            }
        }
        Task::DualTouch => {
            let active = if !state.task.touched[0] { Some(0) } else if !state.task.touched[1] { Some(1) } else { None };
            for side in 0..2 {
                let jaw = state.arms.arm(side).jaw;
                let dt = match active {
                    Some(s) if s == side => toward(state.tip(side), v3(state.task.targets[side]), c.max_translation_step_m),
                    _ => zero,
                };
                a.set_arm(side, dt, zero, jaw);
            }
        }
    }
    a
}
