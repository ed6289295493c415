//! Goal-conditioned action-value network and its training targets.

pub mod tabular;

use std::fmt;
use std::str::FromStr;

use crate::diffusion::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{Activation, Graph, Mlp, NodeId, ParamRegistry, Tensor};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];
pub const DEFAULT_LAG_RATE: f64 = 0.005;
pub const DEFAULT_FAST_STEPS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    MultiStep,
    NaiveMax,
    AmOneStep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSource {
    DiffusionFast,
    DatasetNextAction,
}

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    other => Err(Error::Config(format!("unknown {} `{other}`", stringify!($ty)))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $name,)+ })
            }
        }
    };
}

string_enum!(TargetMode { MultiStep => "multi_step", NaiveMax => "naive_max", AmOneStep => "am_one_step" });
string_enum!(ActionSource { DiffusionFast => "diffusion_fast", DatasetNextAction => "dataset_next_action" });

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetSpec {
    pub mode: TargetMode,
    pub gamma: f64,
    pub action_source: ActionSource,
    /// Reverse steps used when drawing bootstrap actions from the denoiser.
    pub fast_steps: usize,
}

impl TargetSpec {
    pub fn new(gamma: f64) -> Self {
        Self {
            mode: TargetMode::MultiStep,
            gamma,
            action_source: ActionSource::DiffusionFast,
            fast_steps: DEFAULT_FAST_STEPS,
        }
    }
}

/// Window target: `γ^{k−1}` when the goal is first reached at `k ≥ 1`,
/// otherwise `γ · q_next`; clamped to `[0, 1]`.
pub fn chaining_target(achieved_index: Option<usize>, gamma: f64, q_next: f64) -> f64 {
    let y = match achieved_index {
        Some(k) => {
            assert!(k >= 1, "achievement index starts at 1");
            gamma.powi(k as i32 - 1)
        }
        None => gamma * q_next,
    };
    y.clamp(0.0, 1.0)
}

/// Ablation target `max_{k'} γ^{k'} Q(s_{t+k'}, a, g)` where `q_future[k'−1]`
/// holds `Q(s_{t+k'}, a, g)`; the achieved branch matches
/// [`chaining_target`].
pub fn naive_max_target(achieved_index: Option<usize>, gamma: f64, q_future: &[f64]) -> f64 {
    if achieved_index.is_some() {
        return chaining_target(achieved_index, gamma, 0.0);
    }
    let y = q_future
        .iter()
        .enumerate()
        .map(|(i, q)| gamma.powi(i as i32 + 1) * q)
        .fold(f64::NEG_INFINITY, f64::max);
    if y.is_finite() {
        y.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// One-step chaining target: 1 when the current state already reaches the
/// goal, otherwise `γ · q_next`.
pub fn am_one_step_target(reached_now: bool, gamma: f64, q_next: f64) -> f64 {
    if reached_now {
        1.0
    } else {
        (gamma * q_next).clamp(0.0, 1.0)
    }
}

/// `Q_φ(s, a, g)` as a sigmoid-squashed MLP over `s ‖ a ‖ g`.
#[derive(Clone, Debug)]
pub struct CriticNet<T> {
    pub params: ParamRegistry<T>,
    pub mlp: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    /// Optional input normalizer over `state ‖ action`; goals use its leading columns.
    pub input_norm: Option<Normalizer>,
}

impl<T: Scalar> CriticNet<T> {
    pub fn new(state_dim: usize, action_dim: usize, goal_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim + goal_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut params = ParamRegistry::new();
        let mlp = Mlp::new(&mut params, "q", &sizes, Activation::Silu, rng)?;
        Ok(Self {
            params,
            mlp,
            state_dim,
            action_dim,
            goal_dim,
            input_norm: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_dim + self.goal_dim
    }

    /// Builds the `[batch, s+a+g]` input rows, applying the input normalizer.
    pub fn inputs(&self, states: &[f32], actions: &[f32], goals: &[f32]) -> Result<Tensor<T>> {
        let (sd, ad, gd) = (self.state_dim, self.action_dim, self.goal_dim);
        let n = states.len() / sd;
        if states.len() != n * sd || actions.len() != n * ad || goals.len() != n * gd || n == 0 {
            return Err(Error::Shape(format!(
                "critic batch: {} state, {} action, {} goal values",
                states.len(),
                actions.len(),
                goals.len()
            )));
        }
        let mut data = Vec::with_capacity(n * self.input_dim());
        for i in 0..n {
            let (s, a, g) = (
                &states[i * sd..(i + 1) * sd],
                &actions[i * ad..(i + 1) * ad],
                &goals[i * gd..(i + 1) * gd],
            );
            match &self.input_norm {
                Some(nm) => {
                    data.extend(s.iter().enumerate().map(|(j, v)| nm.normalize_col(j, *v)));
                    data.extend(a.iter().enumerate().map(|(j, v)| nm.normalize_col(sd + j, *v)));
                    data.extend(g.iter().enumerate().map(|(j, v)| nm.normalize_col(j, *v)));
                }
                None => {
                    data.extend_from_slice(s);
                    data.extend_from_slice(a);
                    data.extend_from_slice(g);
                }
            }
        }
        Ok(Tensor::from_vec(
            n,
            self.input_dim(),
            data.into_iter().map(|v| T::lit(v as f64)).collect(),
        ))
    }

    /// Records `Q` for prepared input rows; output is `[batch, 1]` in `[0, 1]`.
    pub fn forward(&self, g: &mut Graph<'_, T>, inputs: NodeId) -> NodeId {
        let logits = self.mlp.forward(g, inputs);
        g.sigmoid(logits)
    }

    pub fn q_values(&self, states: &[f32], actions: &[f32], goals: &[f32]) -> Result<Vec<f64>> {
        let x = self.inputs(states, actions, goals)?;
        let mut g = Graph::new(&self.params);
        let xi = g.input(x);
        let q = self.forward(&mut g, xi);
        Ok(g.value(q).data().iter().map(|v| v.f64()).collect())
    }

    pub fn q_value(&self, s: &[f32], a: &[f32], goal: &[f32]) -> Result<f64> {
        Ok(self.q_values(s, a, goal)?[0])
    }

    /// Records `mean ½(Q − y)²` with `y` held constant.
    pub fn td_loss(&self, g: &mut Graph<'_, T>, inputs: Tensor<T>, targets: &[f64]) -> NodeId {
        let xi = g.input(inputs);
        let q = self.forward(g, xi);
        let y: Vec<T> = targets.iter().map(|v| T::lit(*v)).collect();
        g.half_sq_err(q, &y)
    }
}

#[cfg(test)]
mod tests;
