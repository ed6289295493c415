use rand::Rng as _;

use super::layout::{Cell, MazeLayout};
use super::physics::{step, EnvState, PhysicsParams};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const KP: f64 = 1.0;
pub const KD: f64 = 0.5;
/// A waypoint counts as passed once the mass is this close to its center.
pub const WAYPOINT_RADIUS: f64 = 0.4;

/// PD law toward `target`, clamped to the actuator limit.
pub fn pd_action(state: &EnvState, target: [f64; 2], kp: f64, kd: f64, accel_max: f64) -> [f64; 2] {
    let mut a = [0.0; 2];
    for d in 0..2 {
        a[d] = (kp * (target[d] - state.position[d]) - kd * state.velocity[d]).clamp(-accel_max, accel_max);
    }
    a
}

/// Data-collection PD step toward a waypoint (a free cell center).
pub fn scripted_collect_controller(layout: &MazeLayout, state: &EnvState, waypoint: [f64; 2]) -> Result<[f64; 2]> {
    match layout.cell_of(waypoint) {
        Some(c) if layout.is_free(c) => Ok(pd_action(state, waypoint, KP, KD, 1.0)),
        _ => Err(Error::ControllerFault(format!(
            "waypoint {waypoint:?} is not in a free cell"
        ))),
    }
}

/// Distance-minimizing regulator used once a goal is held. With gains
/// `(1, 1 - friction)` an unsaturated step lands exactly on the target.
pub fn hold_action(state: &EnvState, goal: [f64; 2], params: &PhysicsParams) -> [f64; 2] {
    pd_action(
        state,
        goal,
        1.0 / params.dt,
        (1.0 - params.friction) / params.dt,
        params.accel_max,
    )
}

/// Follows the BFS cell path toward a goal cell one waypoint at a time.
#[derive(Clone, Debug)]
pub struct WaypointFollower {
    path: Vec<Cell>,
    next: usize,
}

impl WaypointFollower {
    pub fn new(layout: &MazeLayout, position: [f64; 2], goal: Cell) -> Result<Self> {
        let here = layout
            .cell_of(position)
            .filter(|c| layout.is_free(*c))
            .ok_or_else(|| Error::ControllerFault(format!("position {position:?} outside free space")))?;
        let path = layout
            .bfs_path(here, goal)
            .map_err(|e| Error::ControllerFault(e.to_string()))?;
        Ok(Self { path, next: 0 })
    }

    pub fn path(&self) -> &[Cell] {
        &self.path
    }

    pub fn current_waypoint(&self) -> [f64; 2] {
        self.path[self.next].center()
    }

    pub fn action(&mut self, layout: &MazeLayout, state: &EnvState) -> Result<[f64; 2]> {
        while self.next + 1 < self.path.len() && dist(state.position, self.current_waypoint()) < WAYPOINT_RADIUS {
            self.next += 1;
        }
        scripted_collect_controller(layout, state, self.current_waypoint())
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Shortest-path reference behavior between two points.
#[derive(Clone, Debug)]
pub struct ExpertRun {
    pub path: Vec<Cell>,
    /// BFS lower bound on the number of cell moves.
    pub path_len: usize,
    /// Environment steps the executed expert needed (None if it timed out).
    pub executed_steps: Option<usize>,
    pub discounted_return: f64,
}

/// BFS path plus an executed run of the scripted controller along it.
pub fn shortest_path_expert(
    layout: &MazeLayout,
    params: &PhysicsParams,
    start: &EnvState,
    goal: [f64; 2],
    gamma: f64,
    tolerance: f64,
    max_steps: usize,
) -> Result<ExpertRun> {
    let goal_cell = layout
        .cell_of(goal)
        .filter(|c| layout.is_free(*c))
        .ok_or_else(|| Error::Unreachable(format!("goal {goal:?} outside free space")))?;
    let start_cell = layout
        .cell_of(start.position)
        .ok_or_else(|| Error::Unreachable(format!("start {:?} outside grid", start.position)))?;
    let path = layout.bfs_path(start_cell, goal_cell)?;
    let mut follower = WaypointFollower {
        path: path.clone(),
        next: 0,
    };
    let mut s = *start;
    let mut executed = None;
    for t in 0..=max_steps {
        if dist(s.position, goal) <= tolerance {
            executed = Some(t);
            break;
        }
        if t == max_steps {
            break;
        }
        let a = follower.action(layout, &s)?;
        s = step(&s, a, params, layout);
    }
    Ok(ExpertRun {
        path_len: path.len() - 1,
        path,
        executed_steps: executed,
        discounted_return: executed.map_or(0.0, |k| gamma.powi(k as i32)),
    })
}

/// Uniform action noise in `[-amp, amp]` added on top of a controller output.
pub fn perturb(a: [f64; 2], amp: f64, rng: &mut Rng) -> [f64; 2] {
    if amp <= 0.0 {
        return a;
    }
    [a[0] + rng.random_range(-amp..=amp), a[1] + rng.random_range(-amp..=amp)]
}
