//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::critic::{ActionSource, TargetMode};
use crate::dataset::WindowTail;
use crate::error::{Error, Result};
use crate::planner::ActionMode;
use crate::relabel::RelabelStrategy;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub layout: String,
    pub seed: u64,
    pub horizon: usize,
    pub diffusion_steps: usize,
    pub gamma: f64,
    pub goal_tolerance: f64,
    pub lr: f64,
    pub action_weight: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub relabel: RelabelStrategy,
    pub p_in_window: f64,
    pub window_tail: WindowTail,
    pub target_mode: TargetMode,
    pub action_source: ActionSource,
    pub fast_steps: usize,
    pub lagged_critic: bool,
    pub lag_rate: f64,
    pub value_from_lagged: bool,
    pub critic_hidden: Vec<usize>,
    pub token_dim: usize,
    pub heads: usize,
    pub levels: usize,
    pub invdyn_hidden: Vec<usize>,
    pub invdyn_iterations: usize,
    pub replan_interval: usize,
    pub action_mode: ActionMode,
    pub target_value: f64,
    pub hold_on_goal: bool,
    pub sample_steps: usize,
    pub max_steps: usize,
    pub eval_episodes: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/umaze.ssd"),
            layout: "umaze".into(),
            seed: 0,
            horizon: 16,
            diffusion_steps: 50,
            gamma: 0.98,
            goal_tolerance: 0.5,
            lr: 2e-4,
            action_weight: 1.0,
            batch_size: 64,
            iterations: 30_000,
            relabel: RelabelStrategy::Mixed,
            p_in_window: 0.5,
            window_tail: WindowTail::Pad,
            target_mode: TargetMode::MultiStep,
            action_source: ActionSource::DiffusionFast,
            fast_steps: 5,
            lagged_critic: true,
            lag_rate: 0.005,
            value_from_lagged: false,
            critic_hidden: vec![128, 128],
            token_dim: 64,
            heads: 4,
            levels: 2,
            invdyn_hidden: vec![128, 128],
            invdyn_iterations: 3000,
            replan_interval: 8,
            action_mode: ActionMode::InverseDynamics,
            target_value: 0.2,
            hold_on_goal: true,
            sample_steps: 0,
            max_steps: 200,
            eval_episodes: 100,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("expected a boolean, got `{v}`"))),
    }
}

fn parse_list(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad list entry `{p}`")))
        })
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn tail_name(t: WindowTail) -> &'static str {
    match t {
        WindowTail::Pad => "pad",
        WindowTail::Drop => "drop",
    }
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            c.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = PathBuf::from(v),
            "layout" => self.layout = v.to_string(),
            "seed" => self.seed = num(key, v)?,
            "horizon" => self.horizon = num(key, v)?,
            "diffusion_steps" => self.diffusion_steps = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "goal_tolerance" => self.goal_tolerance = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "action_weight" => self.action_weight = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "relabel" => self.relabel = v.parse()?,
            "p_in_window" => self.p_in_window = num(key, v)?,
            "window_tail" => {
                self.window_tail = match v {
                    "pad" => WindowTail::Pad,
                    "drop" => WindowTail::Drop,
                    _ => return Err(Error::Config(format!("unknown window_tail `{v}`"))),
                }
            }
            "target_mode" => self.target_mode = v.parse()?,
            "action_source" => self.action_source = v.parse()?,
            "fast_steps" => self.fast_steps = num(key, v)?,
            "lagged_critic" => self.lagged_critic = parse_bool(v)?,
            "lag_rate" => self.lag_rate = num(key, v)?,
            "value_from_lagged" => self.value_from_lagged = parse_bool(v)?,
            "critic_hidden" => self.critic_hidden = parse_list(v)?,
            "token_dim" => self.token_dim = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "levels" => self.levels = num(key, v)?,
            "invdyn_hidden" => self.invdyn_hidden = parse_list(v)?,
            "invdyn_iterations" => self.invdyn_iterations = num(key, v)?,
            "replan_interval" => self.replan_interval = num(key, v)?,
            "action_mode" => self.action_mode = v.parse()?,
            "target_value" => self.target_value = num(key, v)?,
            "hold_on_goal" => self.hold_on_goal = parse_bool(v)?,
            "sample_steps" => self.sample_steps = num(key, v)?,
            "max_steps" => self.max_steps = num(key, v)?,
            "eval_episodes" => self.eval_episodes = num(key, v)?,
            "log_every" => self.log_every = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 || self.batch_size == 0 || self.diffusion_steps < 2 {
            return bad("horizon and batch_size must be positive, diffusion_steps at least 2".into());
        }
        if !(0.0..1.0).contains(&self.gamma) || self.gamma == 0.0 {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.p_in_window) || !(0.0..=1.0).contains(&self.target_value) {
            return bad("p_in_window and target_value must lie in [0, 1]".into());
        }
        if self.replan_interval == 0 || self.replan_interval > self.horizon {
            return bad(format!("replan_interval must lie in [1, {}]", self.horizon));
        }
        if self.critic_hidden.is_empty() || self.invdyn_hidden.is_empty() {
            return bad("hidden layer lists must be non-empty".into());
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("dataset", self.dataset.display().to_string());
        kv("layout", self.layout.clone());
        kv("seed", self.seed.to_string());
        kv("horizon", self.horizon.to_string());
        kv("diffusion_steps", self.diffusion_steps.to_string());
        kv("gamma", self.gamma.to_string());
        kv("goal_tolerance", self.goal_tolerance.to_string());
        kv("lr", self.lr.to_string());
        kv("action_weight", self.action_weight.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("iterations", self.iterations.to_string());
        kv("relabel", self.relabel.to_string());
        kv("p_in_window", self.p_in_window.to_string());
        kv("window_tail", tail_name(self.window_tail).into());
        kv("target_mode", self.target_mode.to_string());
        kv("action_source", self.action_source.to_string());
        kv("fast_steps", self.fast_steps.to_string());
        kv("lagged_critic", self.lagged_critic.to_string());
        kv("lag_rate", self.lag_rate.to_string());
        kv("value_from_lagged", self.value_from_lagged.to_string());
        kv("critic_hidden", join(&self.critic_hidden));
        kv("token_dim", self.token_dim.to_string());
        kv("heads", self.heads.to_string());
        kv("levels", self.levels.to_string());
        kv("invdyn_hidden", join(&self.invdyn_hidden));
        kv("invdyn_iterations", self.invdyn_iterations.to_string());
        kv("replan_interval", self.replan_interval.to_string());
        kv("action_mode", self.action_mode.to_string());
        kv("target_value", self.target_value.to_string());
        kv("hold_on_goal", self.hold_on_goal.to_string());
        kv("sample_steps", self.sample_steps.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("log_every", self.log_every.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_is_the_default() {
        let text = include_str!("../../configs/umaze.txt");
        assert_eq!(RunConfig::parse(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_round_trip_and_unknown_keys_fail() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let c =
            RunConfig::parse("# comment\nhorizon = 8 # trailing\nreplan_interval=4\ncritic_hidden = 32, 32\n").unwrap();
        assert_eq!(
            (c.horizon, c.replan_interval, c.critic_hidden.clone()),
            (8, 4, vec![32, 32])
        );
        assert!(matches!(RunConfig::parse("horizn = 3"), Err(Error::Config(_))));
        assert!(RunConfig::parse("gamma = 1.5").is_err());
        assert!(RunConfig::parse("horizon").is_err());
        assert!(RunConfig::parse("relabel = best").is_err());
    }
}
