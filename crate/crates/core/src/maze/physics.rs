use rand::Rng as _;

use super::layout::MazeLayout;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Distance kept between a blocked position and the wall face.
pub const SKIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl EnvState {
    pub fn at_rest(position: [f64; 2]) -> Self {
        Self {
            position,
            velocity: [0.0; 2],
        }
    }

    /// State vector `(x, y, vx, vy)`.
    pub fn to_vec<T: crate::Scalar>(&self) -> Vec<T> {
        [self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
            .iter()
            .map(|v| T::lit(*v))
            .collect()
    }

    pub fn from_slice<T: crate::Scalar>(s: &[T]) -> Self {
        Self {
            position: [s[0].f64(), s[1].f64()],
            velocity: [s[2].f64(), s[3].f64()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicsParams {
    pub dt: f64,
    pub accel_max: f64,
    pub v_max: f64,
    pub friction: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt: 1.0,
            accel_max: 1.0,
            v_max: 2.0,
            friction: 0.1,
        }
    }
}

fn clamp_sym(x: f64, bound: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-bound, bound)
    }
}

/// Moves along one axis from `pos` by `delta`, stopping at the first
/// blocked cell. Returns the new coordinate and whether a wall was hit.
fn advance_axis(pos: f64, delta: f64, blocked: impl Fn(i64) -> bool) -> (f64, bool) {
    let start = pos.floor() as i64;
    let target = pos + delta;
    if delta > 0.0 {
        for c in start + 1..=target.floor() as i64 {
            if blocked(c) {
                return (c as f64 - SKIN, true);
            }
        }
    } else if delta < 0.0 {
        for c in (target.floor() as i64..start).rev() {
            if blocked(c) {
                return ((c + 1) as f64 + SKIN, true);
            }
        }
    }
    (target, false)
}

/// Point-mass transition with axis-separated wall collision.
pub fn step(state: &EnvState, action: [f64; 2], params: &PhysicsParams, layout: &MazeLayout) -> EnvState {
    let mut v = [0.0; 2];
    for d in 0..2 {
        let a = clamp_sym(action[d], params.accel_max);
        v[d] = clamp_sym(
            (1.0 - params.friction) * state.velocity[d] + a * params.dt,
            params.v_max,
        );
    }
    let [x, y] = state.position;
    let row = y.floor() as i64;
    let (nx, hit_x) = advance_axis(x, v[0] * params.dt, |c| layout.is_wall(row, c));
    if hit_x {
        v[0] = 0.0;
    }
    let col = nx.floor() as i64;
    let (ny, hit_y) = advance_axis(y, v[1] * params.dt, |r| layout.is_wall(r, col));
    if hit_y {
        v[1] = 0.0;
    }
    let next = EnvState {
        position: [nx, ny],
        velocity: v,
    };
    debug_assert!(!layout.position_in_wall(next.position), "stepped into a wall: {next:?}");
    next
}

/// Goal sampling regime for [`reset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Single-task: the first goal cell, every episode.
    FixedGoal,
    /// Multi-task: uniform over the layout's goal cells.
    ResampledGoal,
}

pub const START_JITTER: f64 = 0.2;

/// Samples an initial state (start cell plus jitter, zero velocity) and a goal.
pub fn reset(layout: &MazeLayout, rng: &mut Rng, task: Task) -> Result<(EnvState, [f64; 2])> {
    if layout.start_cells.is_empty() {
        return Err(Error::Layout(format!("{} has no start cell", layout.name)));
    }
    if layout.goal_cells.is_empty() {
        return Err(Error::Layout(format!("{} has no goal cell", layout.name)));
    }
    let start = layout.start_cells[rng.random_range(0..layout.start_cells.len())];
    let c = start.center();
    let pos = [
        c[0] + rng.random_range(-START_JITTER..START_JITTER),
        c[1] + rng.random_range(-START_JITTER..START_JITTER),
    ];
    let goal = match task {
        Task::FixedGoal => layout.goal_cells[0],
        Task::ResampledGoal => layout.goal_cells[rng.random_range(0..layout.goal_cells.len())],
    };
    Ok((EnvState::at_rest(pos), goal.center()))
}

/// Seeded convenience wrapper around [`reset`].
pub fn reset_seeded(layout: &MazeLayout, seed: u64, task: Task) -> Result<(EnvState, [f64; 2])> {
    reset(layout, &mut crate::rng::stream(seed, "reset"), task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::layout::Cell;

    fn open() -> MazeLayout {
        MazeLayout::parse("open", "#######\n#S....#\n#.....#\n#.....#\n#....G#\n#######").unwrap()
    }

    #[test]
    fn zero_action_at_rest_is_fixed_point() {
        let l = open();
        let s = EnvState::at_rest([2.5, 2.5]);
        assert_eq!(step(&s, [0.0, 0.0], &PhysicsParams::default(), &l), s);
    }

    #[test]
    fn free_space_matches_closed_form() {
        let l = open();
        let p = PhysicsParams::default();
        let (a, f, dt) = (0.3, p.friction, p.dt);
        let s0 = EnvState {
            position: [1.5, 2.5],
            velocity: [0.2, 0.0],
        };
        let s2 = step(&step(&s0, [a, 0.0], &p, &l), [a, 0.0], &p, &l);
        let v1 = (1.0 - f) * 0.2 + a * dt;
        let v2 = (1.0 - f) * v1 + a * dt;
        let x2 = 1.5 + v1 * dt + v2 * dt;
        assert!((s2.velocity[0] - v2).abs() < 1e-9);
        assert!((s2.position[0] - x2).abs() < 1e-9);
        assert_eq!(s2.position[1], 2.5);
    }

    #[test]
    fn wall_contact_clamps_and_zeroes_normal_velocity() {
        let l = open();
        let s = EnvState {
            position: [5.5, 1.5],
            velocity: [1.5, 0.3],
        };
        let n = step(&s, [1.0, 0.0], &PhysicsParams::default(), &l);
        assert!((n.position[0] - (6.0 - SKIN)).abs() < 1e-12);
        assert_eq!(n.velocity[0], 0.0);
        assert!(n.velocity[1] != 0.0);
    }

    #[test]
    fn fast_motion_cannot_tunnel_through_thin_wall() {
        let l = MazeLayout::parse("thin", "#######\n#..#..#\n#######").unwrap();
        let s = EnvState {
            position: [2.9, 1.5],
            velocity: [2.0, 0.0],
        };
        let n = step(&s, [1.0, 0.0], &PhysicsParams::default(), &l);
        assert!(n.position[0] < 3.0);
        assert_eq!(l.cell_of(n.position), Some(Cell::new(1, 2)));
    }

    #[test]
    fn velocity_is_bounded() {
        let l = open();
        let p = PhysicsParams::default();
        let mut s = EnvState::at_rest([1.5, 1.5]);
        for _ in 0..50 {
            s = step(&s, [1.0, 1.0], &p, &l);
            assert!(s.velocity.iter().all(|v| v.abs() <= p.v_max));
        }
    }

    #[test]
    fn reset_is_deterministic_and_fixed_goal_is_stable() {
        let l = open();
        assert_eq!(
            reset_seeded(&l, 3, Task::FixedGoal).unwrap(),
            reset_seeded(&l, 3, Task::FixedGoal).unwrap()
        );
        let (_, g1) = reset_seeded(&l, 1, Task::FixedGoal).unwrap();
        let (_, g2) = reset_seeded(&l, 2, Task::FixedGoal).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn resampled_goal_is_uniform_over_goal_cells() {
        let l = MazeLayout::parse("three", "######\n#S..G#\n#G...#\n#...G#\n######").unwrap();
        let n = 6000;
        let mut rng = crate::rng::stream(5, "reset");
        let mut counts = vec![0usize; l.goal_cells.len()];
        for _ in 0..n {
            let (_, g) = reset(&l, &mut rng, Task::ResampledGoal).unwrap();
            let i = l.goal_cells.iter().position(|c| c.center() == g).unwrap();
            counts[i] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn reset_requires_start_and_goal() {
        let l = MazeLayout::parse("bare", "####\n#..#\n####").unwrap();
        assert!(reset_seeded(&l, 0, Task::FixedGoal).is_err());
    }
}
