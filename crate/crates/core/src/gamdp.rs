//! Goal-augmented MDP vocabulary: the state-to-goal projection, sparse
//! achievement reward, and trajectory containers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Static description of a goal-augmented MDP instance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaMdpSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub gamma: f64,
    pub goal_tolerance: f64,
    pub max_episode_steps: usize,
}

impl GaMdpSpec {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        goal_dim: usize,
        gamma: f64,
        goal_tolerance: f64,
        max_episode_steps: usize,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 || goal_dim == 0 || max_episode_steps == 0 {
            return Err(Error::InputDomain("dimensions and step limit must be positive".into()));
        }
        if goal_dim > state_dim {
            return Err(Error::InputDomain(format!(
                "goal_dim {goal_dim} exceeds state_dim {state_dim}"
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InputDomain(format!("gamma {gamma} outside (0,1)")));
        }
        if !(goal_tolerance > 0.0) || !goal_tolerance.is_finite() {
            return Err(Error::InputDomain(format!(
                "goal tolerance {goal_tolerance} must be positive"
            )));
        }
        Ok(Self {
            state_dim,
            action_dim,
            goal_dim,
            gamma,
            goal_tolerance,
            max_episode_steps,
        })
    }

    /// Point-mass maze: state (x, y, vx, vy), action (ax, ay), goal (x, y).
    pub fn maze(gamma: f64, goal_tolerance: f64, max_episode_steps: usize) -> Result<Self> {
        Self::new(4, 2, 2, gamma, goal_tolerance, max_episode_steps)
    }
}

/// Window of `h + 1` consecutive state/action pairs, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SubTrajectory<T> {
    pub states: Vec<T>,
    pub actions: Vec<T>,
    pub state_dim: usize,
    pub action_dim: usize,
    pub start_step: usize,
}

impl<T: Scalar> SubTrajectory<T> {
    pub fn new(
        states: Vec<T>,
        actions: Vec<T>,
        state_dim: usize,
        action_dim: usize,
        start_step: usize,
    ) -> Result<Self> {
        if state_dim == 0
            || action_dim == 0
            || !states.len().is_multiple_of(state_dim)
            || !actions.len().is_multiple_of(action_dim)
        {
            return Err(Error::Shape("window buffers not a multiple of their row width".into()));
        }
        let n = states.len() / state_dim;
        if actions.len() / action_dim != n {
            return Err(Error::Shape(format!(
                "{n} states but {} actions",
                actions.len() / action_dim
            )));
        }
        if n < 2 {
            return Err(Error::Shape("a window needs h >= 1".into()));
        }
        Ok(Self {
            states,
            actions,
            state_dim,
            action_dim,
            start_step,
        })
    }

    /// `h`: index of the last entry.
    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, j: usize) -> &[T] {
        &self.states[j * self.state_dim..(j + 1) * self.state_dim]
    }

    pub fn action(&self, j: usize) -> &[T] {
        &self.actions[j * self.action_dim..(j + 1) * self.action_dim]
    }

    /// Rows of `state ‖ action`, the layout the denoiser works on.
    pub fn to_joint(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.states.len() + self.actions.len());
        for j in 0..self.len() {
            out.extend_from_slice(self.state(j));
            out.extend_from_slice(self.action(j));
        }
        out
    }

    pub fn from_joint(joint: &[T], state_dim: usize, action_dim: usize, start_step: usize) -> Result<Self> {
        let w = state_dim + action_dim;
        if !joint.len().is_multiple_of(w) {
            return Err(Error::Shape(format!(
                "joint buffer of {} not a multiple of {w}",
                joint.len()
            )));
        }
        let mut states = Vec::with_capacity(joint.len() / w * state_dim);
        let mut actions = Vec::with_capacity(joint.len() / w * action_dim);
        for row in joint.chunks(w) {
            states.extend_from_slice(&row[..state_dim]);
            actions.extend_from_slice(&row[state_dim..]);
        }
        Self::new(states, actions, state_dim, action_dim, start_step)
    }
}

/// One recorded episode `s_{0:T} ‖ a_{0:T} ‖ g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<T> {
    pub states: Vec<T>,
    pub actions: Vec<T>,
    pub desired_goal: Vec<T>,
    pub terminated_at_goal: bool,
}

impl<T: Scalar> Episode<T> {
    /// Number of recorded steps, `T + 1`.
    pub fn len(&self, spec: &GaMdpSpec) -> usize {
        self.states.len() / spec.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state<'a>(&'a self, spec: &GaMdpSpec, t: usize) -> &'a [T] {
        &self.states[t * spec.state_dim..(t + 1) * spec.state_dim]
    }

    pub fn action<'a>(&'a self, spec: &GaMdpSpec, t: usize) -> &'a [T] {
        &self.actions[t * spec.action_dim..(t + 1) * spec.action_dim]
    }

    pub fn validate(&self, spec: &GaMdpSpec) -> Result<()> {
        let n = self.states.len() / spec.state_dim;
        if self.states.len() != n * spec.state_dim || self.actions.len() != n * spec.action_dim {
            return Err(Error::Shape("episode buffers disagree on length".into()));
        }
        if n < 2 {
            return Err(Error::Shape("episode shorter than two steps".into()));
        }
        if self.desired_goal.len() != spec.goal_dim {
            return Err(Error::DimMismatch {
                expected: spec.goal_dim,
                got: self.desired_goal.len(),
            });
        }
        if self.terminated_at_goal && !goal_reached(self.state(spec, n - 1), &self.desired_goal, spec)? {
            return Err(Error::InputDomain(
                "episode flagged successful but last state misses the goal".into(),
            ));
        }
        Ok(())
    }
}

/// State-to-goal mapping: projection onto the first `goal_dim` coordinates.
pub fn psi<T: Scalar>(state: &[T], goal_dim: usize) -> Result<Vec<T>> {
    if state.len() < goal_dim {
        return Err(Error::DimMismatch {
            expected: goal_dim,
            got: state.len(),
        });
    }
    if state.iter().any(|x| !x.is_finite()) {
        return Err(Error::InputDomain("non-finite state".into()));
    }
    Ok(state[..goal_dim].to_vec())
}

/// Lifts a goal to a state whose goal coordinates equal it (zeros elsewhere).
pub fn goal_augment<T: Scalar>(goal: &[T], state_dim: usize) -> Vec<T> {
    let mut s = vec![T::zero(); state_dim];
    s[..goal.len()].copy_from_slice(goal);
    s
}

/// Euclidean distance between `psi(state)` and `goal`, computed in f64.
pub fn goal_distance<T: Scalar>(state: &[T], goal: &[T]) -> f64 {
    state
        .iter()
        .zip(goal)
        .map(|(s, g)| {
            let d = s.f64() - g.f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Closed-ball achievement test `‖psi(s) − g‖ ≤ tolerance`.
pub fn goal_reached<T: Scalar>(state: &[T], goal: &[T], spec: &GaMdpSpec) -> Result<bool> {
    if state.len() != spec.state_dim {
        return Err(Error::DimMismatch {
            expected: spec.state_dim,
            got: state.len(),
        });
    }
    if goal.len() != spec.goal_dim {
        return Err(Error::DimMismatch {
            expected: spec.goal_dim,
            got: goal.len(),
        });
    }
    Ok(goal_distance(&state[..spec.goal_dim], goal) <= spec.goal_tolerance)
}

/// Window reward: 1 iff the final state of the window reaches `goal`.
pub fn subtraj_reward<T: Scalar>(x: &SubTrajectory<T>, goal: &[T], spec: &GaMdpSpec) -> Result<u8> {
    Ok(u8::from(goal_reached(x.state(x.horizon()), goal, spec)?))
}

/// First step index at which the episode reaches `goal`.
pub fn first_achievement<T: Scalar>(episode: &Episode<T>, goal: &[T], spec: &GaMdpSpec) -> Result<Option<usize>> {
    for t in 0..episode.len(spec) {
        if goal_reached(episode.state(spec, t), goal, spec)? {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// `Σ_t γ^t 1(reached)` truncated at the first achievement, i.e. `γ^k` or 0.
pub fn discounted_return<T: Scalar>(episode: &Episode<T>, goal: &[T], gamma: f64, spec: &GaMdpSpec) -> Result<f64> {
    Ok(first_achievement(episode, goal, spec)?.map_or(0.0, |k| gamma.powi(k as i32)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> GaMdpSpec {
        GaMdpSpec::maze(0.98, 0.5, 100).unwrap()
    }

    fn line_episode(goal_at: Option<usize>, len: usize) -> Episode<f64> {
        let mut states = Vec::new();
        for t in 0..len {
            let x = if Some(t) >= goal_at && goal_at.is_some() {
                10.0
            } else {
                t as f64
            };
            states.extend_from_slice(&[x, 0.0, 0.0, 0.0]);
        }
        Episode {
            states,
            actions: vec![0.0; 2 * len],
            desired_goal: vec![10.0, 0.0],
            terminated_at_goal: false,
        }
    }

    #[test]
    fn psi_projects_position() {
        assert_eq!(psi(&[1.0, 2.0, 0.3, -0.1], 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(psi(&goal_augment(&[0.0f64, 0.0], 4), 2).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(psi(&[f64::NAN, 0.0], 2), Err(Error::InputDomain(_))));
    }

    #[test]
    fn spec_rejects_bad_gamma() {
        assert!(GaMdpSpec::new(4, 2, 2, 1.0, 0.5, 10).is_err());
        assert!(GaMdpSpec::new(2, 2, 4, 0.9, 0.5, 10).is_err());
    }

    #[test]
    fn goal_reached_boundary_is_closed() {
        let s = spec();
        assert!(goal_reached(&[1.0, 1.0, 0.0, 0.0], &[1.0, 1.0], &s).unwrap());
        assert!(goal_reached(&[1.5, 1.0, 0.0, 0.0], &[1.0, 1.0], &s).unwrap());
        assert!(!goal_reached(&[1.5 + 1e-6, 1.0, 0.0, 0.0], &[1.0, 1.0], &s).unwrap());
        assert!(goal_reached(&[1.0, 1.0], &[1.0, 1.0], &s).is_err());
    }

    #[test]
    fn window_reward_uses_last_state_only() {
        let s = spec();
        // passes through the goal at j = 1, ends elsewhere
        let states = vec![0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 0.0, 0.0, 9.0, 9.0, 0.0, 0.0];
        let x = SubTrajectory::new(states, vec![0.0; 6], 4, 2, 0).unwrap();
        assert_eq!(subtraj_reward(&x, &[5.0, 5.0], &s).unwrap(), 0);
        assert_eq!(subtraj_reward(&x, &[9.0, 9.0], &s).unwrap(), 1);
        assert_eq!(subtraj_reward(&x, &[-7.0, 3.0], &s).unwrap(), 0);
    }

    #[test]
    fn discounted_return_cases() {
        let s = spec();
        let ep = line_episode(Some(0), 4);
        assert_eq!(discounted_return(&ep, &[10.0, 0.0], 0.98, &s).unwrap(), 1.0);
        let ep = line_episode(Some(5), 8);
        let r = discounted_return(&ep, &[10.0, 0.0], 0.98, &s).unwrap();
        assert!((r - 0.98f64.powi(5)).abs() < 1e-15);
        assert!((r - 0.9039).abs() < 1e-4);
        let ep = line_episode(None, 8);
        assert_eq!(discounted_return(&ep, &[100.0, 0.0], 0.98, &s).unwrap(), 0.0);
    }

    #[test]
    fn joint_layout_round_trips() {
        let x = SubTrajectory::new(
            (0..12).map(f64::from).collect(),
            (0..6).map(f64::from).collect(),
            4,
            2,
            3,
        )
        .unwrap();
        let y = SubTrajectory::from_joint(&x.to_joint(), 4, 2, 3).unwrap();
        assert_eq!(x, y);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn psi_augment_round_trips(s in proptest::collection::vec(-1e6f64..1e6, 4)) {
            let g = psi(&s, 2).unwrap();
            prop_assert_eq!(psi(&goal_augment(&g, 4), 2).unwrap(), g);
        }

        #[test]
        fn reward_matches_goal_reached(s in proptest::collection::vec(-3f64..3.0, 8), g in proptest::collection::vec(-3f64..3.0, 2)) {
            let spec = spec();
            let x = SubTrajectory::new(s, vec![0.0; 4], 4, 2, 0).unwrap();
            let r = subtraj_reward(&x, &g, &spec).unwrap();
            prop_assert_eq!(r == 1, goal_reached(x.state(1), &g, &spec).unwrap());
        }
    }
}
