//! Condition-prompted transformer U-net over trajectory tokens.

use crate::error::{Error, Result};
use crate::nn::{sinusoidal, Activation, Dense, Graph, Mlp, NodeId, ParamRegistry, Tensor, TransformerBlock};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct UnetConfig {
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub token_dim: usize,
    pub heads: usize,
    pub levels: usize,
}

impl UnetConfig {
    pub fn new(horizon: usize, state_dim: usize, action_dim: usize, goal_dim: usize) -> Self {
        Self {
            horizon,
            state_dim,
            action_dim,
            goal_dim,
            token_dim: 64,
            heads: 4,
            levels: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.state_dim == 0 || self.action_dim == 0 || self.goal_dim == 0 {
            return Err(Error::Config("unet dimensions must be positive".into()));
        }
        if self.goal_dim > self.state_dim {
            return Err(Error::Config("goal_dim exceeds state_dim".into()));
        }
        if self.token_dim < 2 || !self.token_dim.is_multiple_of(2) || !self.token_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "token_dim {} must be even and divisible by heads {}",
                self.token_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Trajectory tokens `h + 1`.
    pub fn tokens(&self) -> usize {
        self.horizon + 1
    }

    /// Trajectory tokens rounded up to a multiple of `2^levels`.
    pub fn padded_tokens(&self) -> usize {
        let m = 1usize << self.levels;
        self.tokens().div_ceil(m) * m
    }

    pub fn channels(&self) -> usize {
        self.state_dim + self.action_dim
    }
}

/// Sampling condition for one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub goal: Vec<f32>,
    pub value: f32,
    pub inpaint_state: Option<Vec<f32>>,
}

impl Condition {
    pub fn validate(&self, goal_dim: usize, state_dim: usize) -> Result<()> {
        if self.goal.len() != goal_dim {
            return Err(Error::DimMismatch {
                expected: goal_dim,
                got: self.goal.len(),
            });
        }
        if !self.goal.iter().all(|g| g.is_finite()) {
            return Err(Error::InputDomain("goal must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.value) {
            return Err(Error::InputDomain(format!(
                "target value {} outside [0, 1]",
                self.value
            )));
        }
        if let Some(s) = &self.inpaint_state {
            if s.len() != state_dim {
                return Err(Error::DimMismatch {
                    expected: state_dim,
                    got: s.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CondPromptUnet<T> {
    pub config: UnetConfig,
    pub params: ParamRegistry<T>,
    embed: Dense,
    time: Mlp,
    goal: Mlp,
    value: Mlp,
    down: Vec<(TransformerBlock, Dense)>,
    mid: TransformerBlock,
    up: Vec<(Dense, TransformerBlock)>,
    head: Dense,
}

impl<T: Scalar> CondPromptUnet<T> {
    pub fn new(config: UnetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.token_dim;
        let h = config.heads;
        let mut reg = ParamRegistry::new();
        let embed = Dense::new(&mut reg, "embed", config.channels(), d, rng)?;
        let time = Mlp::new(&mut reg, "time", &[d, d, d], Activation::Silu, rng)?;
        let goal = Mlp::new(&mut reg, "goal", &[config.goal_dim, d, d], Activation::Silu, rng)?;
        let value = Mlp::new(&mut reg, "value", &[1, d, d], Activation::Silu, rng)?;
        let mut down = Vec::new();
        for l in 0..config.levels {
            let blk = TransformerBlock::new(&mut reg, &format!("down{l}.block"), d, h, rng)?;
            let merge = Dense::new(&mut reg, &format!("down{l}.merge"), 2 * d, d, rng)?;
            down.push((blk, merge));
        }
        let mid = TransformerBlock::new(&mut reg, "mid", d, h, rng)?;
        let mut up = Vec::new();
        for l in 0..config.levels {
            let split = Dense::new(&mut reg, &format!("up{l}.split"), d, 2 * d, rng)?;
            let blk = TransformerBlock::new(&mut reg, &format!("up{l}.block"), d, h, rng)?;
            up.push((split, blk));
        }
        let head = Dense::new(&mut reg, "head", d, config.channels(), rng)?;
        Ok(Self {
            config,
            params: reg,
            embed,
            time,
            goal,
            value,
            down,
            mid,
            up,
            head,
        })
    }

    pub fn graph(&self) -> Graph<'_, T> {
        Graph::new(&self.params)
    }

    /// Layer handles resolve through `g`'s registry, which is normally
    /// [`CondPromptUnet::params`].
    ///
    /// Predicts the noise of `x` (`[batch * (h+1), state+action]`, normalized)
    /// at diffusion steps `steps`, conditioned on normalized `goals`
    /// (`[batch, goal_dim]`) and target `values`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: NodeId, steps: &[usize], goals: &Tensor<T>, values: &[T]) -> NodeId {
        let c = &self.config;
        let batch = steps.len();
        let d = c.token_dim;
        let (l0, lp) = (c.tokens(), c.padded_tokens());
        assert_eq!(g.value(x).shape(), &[batch * l0, c.channels()], "unet input shape");
        assert_eq!(goals.shape(), &[batch, c.goal_dim], "unet goal shape");
        assert_eq!(values.len(), batch, "unet value count");

        let mut h = if lp > l0 {
            let pad = g.input(Tensor::zeros(&[batch * (lp - l0), c.channels()]));
            g.concat_tokens(x, pad, batch)
        } else {
            x
        };
        h = self.embed.forward(g, h);
        let pos: Vec<f64> = (0..batch).flat_map(|_| (0..lp).map(|j| j as f64)).collect();
        let pos = g.input(sinusoidal(&pos, d));
        h = g.add(h, pos);

        let t: Vec<f64> = steps.iter().map(|s| *s as f64).collect();
        let temb = g.input(sinusoidal(&t, d));
        let temb = self.time.forward(g, temb);
        let t_tokens = g.repeat_tokens(temb, lp);
        h = g.add(h, t_tokens);

        let goal_in = g.input(goals.clone());
        let goal_tok = self.goal.forward(g, goal_in);
        let value_in = g.input(Tensor::from_vec(batch, 1, values.to_vec()));
        let value_tok = self.value.forward(g, value_in);
        let prompts = g.concat_tokens(goal_tok, value_tok, batch);
        let t_prompt = g.repeat_tokens(temb, 2);
        let prompts = g.add(prompts, t_prompt);

        let with_prompts = |g: &mut Graph<'_, T>, blk: &TransformerBlock, h: NodeId, len: usize| {
            let joined = g.concat_tokens(prompts, h, batch);
            let out = blk.forward(g, joined, batch, len + 2);
            g.slice_tokens(out, batch, 2, len + 2)
        };

        let mut skips = Vec::with_capacity(c.levels);
        let mut len = lp;
        for (blk, merge) in &self.down {
            h = with_prompts(g, blk, h, len);
            skips.push(h);
            len /= 2;
            h = g.reshape(h, &[batch * len, 2 * d]);
            h = merge.forward(g, h);
        }
        h = with_prompts(g, &self.mid, h, len);
        for (split, blk) in self.up.iter().rev() {
            h = split.forward(g, h);
            len *= 2;
            h = g.reshape(h, &[batch * len, d]);
            h = g.add(h, skips.pop().expect("one skip per level"));
            h = with_prompts(g, blk, h, len);
        }
        if lp > l0 {
            h = g.slice_tokens(h, batch, 0, l0);
        }
        self.head.forward(g, h)
    }

    /// Noise prediction outside of a training step.
    pub fn predict(&self, x: Tensor<T>, steps: &[usize], goals: &Tensor<T>, values: &[T]) -> Tensor<T> {
        let mut g = self.graph();
        let xi = g.input(x);
        let out = self.forward(&mut g, xi, steps, goals, values);
        g.value(out).clone()
    }
}
