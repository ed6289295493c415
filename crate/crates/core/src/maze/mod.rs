//! Deterministic point-mass maze: layouts, dynamics, the scripted
//! data-collection controller and the shortest-path expert.

mod controller;
mod layout;
mod physics;

pub use controller::{
    dist, hold_action, pd_action, perturb, scripted_collect_controller, shortest_path_expert, ExpertRun,
    WaypointFollower, KD, KP, WAYPOINT_RADIUS,
};
pub use layout::{Cell, MazeLayout, LAYOUT_NAMES};
pub use physics::{reset, reset_seeded, step, EnvState, PhysicsParams, Task, SKIN, START_JITTER};
