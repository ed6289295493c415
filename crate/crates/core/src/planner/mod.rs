//! Receding-horizon execution of sampled plans, plus reference policies.

mod regressor;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

pub use regressor::{Regressor, RegressorConfig};

use crate::dataset::OfflineDataset;
use crate::diffusion::{reverse_sample, CondPromptUnet, Condition, NoiseSchedule, Normalizer};
use crate::error::{Error, Result};
use crate::gamdp::{GaMdpSpec, SubTrajectory};
use crate::maze::{dist, hold_action, step, EnvState, MazeLayout, PhysicsParams, WaypointFollower};
use crate::rng::{self, Rng};

pub const ACTION_BOUND: f32 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    FirstKActions,
    InverseDynamics,
}

impl FromStr for ActionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_k_actions" => Ok(Self::FirstKActions),
            "inverse_dynamics" => Ok(Self::InverseDynamics),
            other => Err(Error::Config(format!("unknown action mode `{other}`"))),
        }
    }
}

impl fmt::Display for ActionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FirstKActions => "first_k_actions",
            Self::InverseDynamics => "inverse_dynamics",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub replan_interval: usize,
    pub action_mode: ActionMode,
    pub target_value: f32,
    pub hold_on_goal: bool,
    pub max_steps: usize,
    /// Strided reverse steps per plan; `None` runs the full chain.
    pub sample_steps: Option<usize>,
}

impl PlannerConfig {
    /// Maze defaults for horizon `h`: replan every `h/2` steps through
    /// inverse dynamics.
    pub fn maze(h: usize) -> Self {
        Self {
            replan_interval: (h / 2).max(1),
            action_mode: ActionMode::InverseDynamics,
            target_value: 0.2,
            hold_on_goal: true,
            max_steps: 200,
            sample_steps: None,
        }
    }

    pub fn validate(&self, h: usize) -> Result<()> {
        if self.replan_interval == 0 || self.replan_interval > h {
            return Err(Error::Config(format!(
                "replan interval {} must lie in [1, {h}]",
                self.replan_interval
            )));
        }
        if !(0.0..=1.0).contains(&self.target_value) {
            return Err(Error::Config(format!(
                "target value {} outside [0, 1]",
                self.target_value
            )));
        }
        Ok(())
    }
}

/// `F(s_t, s_{t+1}) ≈ a_t`.
#[derive(Clone, Debug)]
pub struct InverseDynamicsModel {
    pub net: Regressor,
    pub state_dim: usize,
}

impl InverseDynamicsModel {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            net: Regressor::new(2 * state_dim, action_dim, hidden, ACTION_BOUND, rng)?,
            state_dim,
        })
    }

    pub fn infer(&self, s: &[f32], s_next: &[f32]) -> Vec<f32> {
        let mut x = s.to_vec();
        x.extend_from_slice(s_next);
        self.net.predict(&x)
    }

    /// Actions for consecutive state pairs of a plan, `j = 0..k`.
    pub fn plan_actions(&self, plan: &SubTrajectory<f32>, k: usize) -> Vec<Vec<f32>> {
        let k = k.min(plan.horizon());
        let mut xs = Vec::with_capacity(k * 2 * self.state_dim);
        for j in 0..k {
            xs.extend_from_slice(plan.state(j));
            xs.extend_from_slice(plan.state(j + 1));
        }
        let ad = self.net.out_dim();
        self.net.predict(&xs).chunks(ad).map(<[f32]>::to_vec).collect()
    }
}

/// Supervised fit on every consecutive-state pair of the dataset; returns
/// the model and its held-out action MSE.
pub fn fit_inverse_dynamics(dataset: &OfflineDataset, cfg: &RegressorConfig) -> Result<(InverseDynamicsModel, f64)> {
    let spec = &dataset.spec;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for ep in &dataset.episodes {
        for t in 0..ep.len(spec) - 1 {
            xs.extend_from_slice(ep.state(spec, t));
            xs.extend_from_slice(ep.state(spec, t + 1));
            ys.extend_from_slice(ep.action(spec, t));
        }
    }
    if ys.is_empty() {
        return Err(Error::InputDomain(
            "inverse dynamics needs at least one transition".into(),
        ));
    }
    let (net, mse) = Regressor::fit(&xs, &ys, 2 * spec.state_dim, spec.action_dim, ACTION_BOUND, cfg)?;
    Ok((
        InverseDynamicsModel {
            net,
            state_dim: spec.state_dim,
        },
        mse,
    ))
}

/// Closed-loop controller interface used by [`rollout`].
pub trait Policy {
    /// Clears per-episode state and reseeds any internal randomness.
    fn reset(&mut self, seed: u64);
    fn act(&mut self, layout: &MazeLayout, state: &EnvState, goal: [f64; 2]) -> Result<[f64; 2]>;
}

/// Trained denoiser bundle the planner samples from.
#[derive(Clone, Debug)]
pub struct PlanModels {
    pub unet: CondPromptUnet<f32>,
    pub schedule: NoiseSchedule<f32>,
    pub norm: Normalizer,
    pub inverse_dynamics: Option<InverseDynamicsModel>,
}

pub struct DiffusionPlanner<'m> {
    pub models: &'m PlanModels,
    pub config: PlannerConfig,
    pub spec: GaMdpSpec,
    pub physics: PhysicsParams,
    queue: VecDeque<[f64; 2]>,
    age: usize,
    last_plan: Option<SubTrajectory<f32>>,
    rng: Rng,
}

impl<'m> DiffusionPlanner<'m> {
    pub fn new(models: &'m PlanModels, config: PlannerConfig, spec: GaMdpSpec, physics: PhysicsParams) -> Result<Self> {
        config.validate(models.unet.config.horizon)?;
        if config.action_mode == ActionMode::InverseDynamics && models.inverse_dynamics.is_none() {
            return Err(Error::Config(
                "inverse_dynamics action mode needs an inverse dynamics model".into(),
            ));
        }
        Ok(Self {
            models,
            config,
            spec,
            physics,
            queue: VecDeque::new(),
            age: 0,
            last_plan: None,
            rng: rng::stream(0, rng::STREAM_EVAL),
        })
    }

    pub fn last_plan(&self) -> Option<&SubTrajectory<f32>> {
        self.last_plan.as_ref()
    }

    /// Actions not yet served from the current plan.
    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn replan(&mut self, state: &EnvState, goal: [f64; 2]) -> Result<()> {
        let cond = Condition {
            goal: goal.iter().map(|v| *v as f32).collect(),
            value: self.config.target_value,
            inpaint_state: Some(state.to_vec()),
        };
        let m = self.models;
        let plan = reverse_sample(
            &m.unet,
            &m.schedule,
            &m.norm,
            &[cond],
            self.config.sample_steps,
            &mut self.rng,
        )?
        .pop()
        .expect("one condition, one plan");
        let k = self.config.replan_interval;
        self.queue.clear();
        match self.config.action_mode {
            ActionMode::FirstKActions => {
                for j in 0..k {
                    let a = plan.action(j);
                    self.queue.push_back([a[0] as f64, a[1] as f64]);
                }
            }
            ActionMode::InverseDynamics => {
                let f = m.inverse_dynamics.as_ref().expect("checked at construction");
                for a in f.plan_actions(&plan, k) {
                    self.queue.push_back([a[0] as f64, a[1] as f64]);
                }
            }
        }
        self.age = 0;
        self.last_plan = Some(plan);
        Ok(())
    }
}

impl Policy for DiffusionPlanner<'_> {
    fn reset(&mut self, seed: u64) {
        self.queue.clear();
        self.age = 0;
        self.last_plan = None;
        self.rng = rng::stream(seed, rng::STREAM_EVAL);
    }

    fn act(&mut self, _layout: &MazeLayout, state: &EnvState, goal: [f64; 2]) -> Result<[f64; 2]> {
        if self.config.hold_on_goal && dist(state.position, goal) <= self.spec.goal_tolerance {
            return Ok(hold_action(state, goal, &self.physics));
        }
        if self.queue.is_empty() || self.age >= self.config.replan_interval {
            self.replan(state, goal)?;
        }
        self.age += 1;
        Ok(self.queue.pop_front().expect("replanned queue is non-empty"))
    }
}

/// The shortest-path scripted controller as a policy.
#[derive(Clone, Debug, Default)]
pub struct ExpertPolicy {
    follower: Option<WaypointFollower>,
}

impl Policy for ExpertPolicy {
    fn reset(&mut self, _seed: u64) {
        self.follower = None;
    }

    fn act(&mut self, layout: &MazeLayout, state: &EnvState, goal: [f64; 2]) -> Result<[f64; 2]> {
        if self.follower.is_none() {
            let cell = layout
                .cell_of(goal)
                .ok_or_else(|| Error::Unreachable(format!("goal {goal:?} off the grid")))?;
            self.follower = Some(WaypointFollower::new(layout, state.position, cell)?);
        }
        self.follower.as_mut().expect("just set").action(layout, state)
    }
}

/// Uniform random actions in the actuator box.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: Rng,
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self {
            rng: rng::stream(0, rng::STREAM_EVAL),
        }
    }
}

impl Policy for RandomPolicy {
    fn reset(&mut self, seed: u64) {
        self.rng = rng::stream(seed, rng::STREAM_EVAL);
    }

    fn act(&mut self, _layout: &MazeLayout, _state: &EnvState, _goal: [f64; 2]) -> Result<[f64; 2]> {
        let b = ACTION_BOUND as f64;
        Ok([self.rng.random_range(-b..=b), self.rng.random_range(-b..=b)])
    }
}

/// One-step goal-conditioned behaviour cloning: `π(s, g) → a` regressed on
/// each episode's own desired goal.
#[derive(Clone, Debug)]
pub struct BcPolicy {
    pub net: Regressor,
}

impl BcPolicy {
    pub fn fit(dataset: &OfflineDataset, cfg: &RegressorConfig) -> Result<(Self, f64)> {
        let spec = &dataset.spec;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for ep in &dataset.episodes {
            for t in 0..ep.len(spec) {
                xs.extend_from_slice(ep.state(spec, t));
                xs.extend_from_slice(&ep.desired_goal);
                ys.extend_from_slice(ep.action(spec, t));
            }
        }
        let (net, mse) = Regressor::fit(
            &xs,
            &ys,
            spec.state_dim + spec.goal_dim,
            spec.action_dim,
            ACTION_BOUND,
            cfg,
        )?;
        Ok((Self { net }, mse))
    }
}

impl Policy for BcPolicy {
    fn reset(&mut self, _seed: u64) {}

    fn act(&mut self, _layout: &MazeLayout, state: &EnvState, goal: [f64; 2]) -> Result<[f64; 2]> {
        let mut x: Vec<f32> = state.to_vec();
        x.extend(goal.iter().map(|v| *v as f32));
        let a = self.net.predict(&x);
        Ok([a[0] as f64, a[1] as f64])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutConfig {
    pub max_steps: usize,
    pub gamma: f64,
    pub tolerance: f64,
    /// Stop at the first achievement; otherwise run all `max_steps`.
    pub terminate_on_goal: bool,
    pub physics: PhysicsParams,
}

impl RolloutConfig {
    pub fn new(spec: &GaMdpSpec, max_steps: usize) -> Self {
        Self {
            max_steps,
            gamma: spec.gamma,
            tolerance: spec.goal_tolerance,
            terminate_on_goal: true,
            physics: PhysicsParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    /// Steps until the first achievement, or all steps taken on failure.
    pub steps: usize,
    pub success: bool,
    pub discounted_return: f64,
    pub final_distance: f64,
    pub normalized_score: f64,
    pub goal: [f64; 2],
    /// Visited states `(x, y, vx, vy)` including the initial one.
    pub states: Vec<[f64; 4]>,
}

/// Runs `policy` from `start` toward `goal`.
pub fn rollout(
    layout: &MazeLayout,
    policy: &mut dyn Policy,
    start: EnvState,
    goal: [f64; 2],
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    policy.reset(seed);
    let mut s = start;
    let record = |s: &EnvState| [s.position[0], s.position[1], s.velocity[0], s.velocity[1]];
    let mut states = vec![record(&s)];
    let mut first_hit = None;
    let mut taken = 0;
    if cfg.max_steps > 0 {
        for t in 0..=cfg.max_steps {
            if first_hit.is_none() && dist(s.position, goal) <= cfg.tolerance {
                first_hit = Some(t);
                if cfg.terminate_on_goal {
                    break;
                }
            }
            if t == cfg.max_steps {
                break;
            }
            let a = policy.act(layout, &s, goal)?;
            s = step(&s, a, &cfg.physics, layout);
            states.push(record(&s));
            taken = t + 1;
        }
    }
    let success = first_hit.is_some();
    Ok(EpisodeResult {
        seed,
        steps: first_hit.unwrap_or(taken),
        success,
        discounted_return: first_hit.map_or(0.0, |k| cfg.gamma.powi(k as i32)),
        final_distance: dist(s.position, goal),
        normalized_score: f64::NAN,
        goal,
        states,
    })
}

#[cfg(test)]
mod tests;
