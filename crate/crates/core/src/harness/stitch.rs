//! The stitching experiment: train on A→B and B→C episodes only, then
//! drive from A to C.

use std::time::Instant;

use super::config::RunConfig;
use super::eval::{evaluate, mean_se, planner_config, EvalRow};
use super::train::Trainer;
use crate::dataset::{collect_routes, CollectConfig, OfflineDataset};
use crate::error::{Error, Result};
use crate::gamdp::GaMdpSpec;
use crate::maze::{Cell, MazeLayout, PhysicsParams, Task};
use crate::planner::{BcPolicy, DiffusionPlanner, RandomPolicy, RegressorConfig};

#[derive(Clone, Debug)]
pub struct StitchConfig {
    pub layout: String,
    pub a: Cell,
    pub b: Cell,
    pub c: Cell,
    pub transitions: usize,
    pub episodes: usize,
    pub run: RunConfig,
    pub bc: RegressorConfig,
}

impl Default for StitchConfig {
    /// u-maze with A at the start cell, B at the bend, C at the goal cell.
    fn default() -> Self {
        let run = RunConfig {
            layout: "umaze".into(),
            horizon: 8,
            replan_interval: 4,
            token_dim: 32,
            batch_size: 32,
            iterations: 4000,
            invdyn_iterations: 2000,
            max_steps: 100,
            ..RunConfig::default()
        };
        Self {
            layout: "umaze".into(),
            a: Cell::new(1, 1),
            b: Cell::new(2, 3),
            c: Cell::new(3, 1),
            transitions: 20_000,
            episodes: 100,
            run,
            bc: RegressorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StitchSeedResult {
    pub seed: u64,
    pub ssd_success: f64,
    pub bc_success: f64,
    pub random_success: f64,
    pub ssd_return: f64,
    pub bc_return: f64,
    pub critic_loss: Vec<f64>,
    pub diffusion_loss: Vec<f64>,
    pub seconds: f64,
}

fn rates(rows: &[EvalRow]) -> (f64, f64) {
    let s: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.result.success))).collect();
    let g: Vec<f64> = rows.iter().map(|r| r.result.discounted_return).collect();
    (mean_se(&s).0, mean_se(&g).0)
}

/// Route-restricted dataset for one seed.
pub fn stitch_dataset(cfg: &StitchConfig, seed: u64) -> Result<OfflineDataset> {
    let layout = MazeLayout::builtin(&cfg.layout)?;
    let spec = GaMdpSpec::maze(cfg.run.gamma, cfg.run.goal_tolerance, cfg.run.max_steps)?;
    collect_routes(
        &layout,
        &spec,
        &CollectConfig::default(),
        &[(cfg.a, cfg.b), (cfg.b, cfg.c)],
        cfg.transitions,
        seed,
    )
}

/// Collects, trains and evaluates SSD, one-step BC and a random policy for one seed.
pub fn run_stitch_seed(cfg: &StitchConfig, seed: u64) -> Result<StitchSeedResult> {
    let start = Instant::now();
    let layout = MazeLayout::builtin(&cfg.layout)?;
    if layout.start_cells.first() != Some(&cfg.a) || layout.goal_cells.first() != Some(&cfg.c) {
        return Err(Error::Config(format!(
            "{} must start at A {:?} with goal C {:?}",
            cfg.layout, cfg.a, cfg.c
        )));
    }
    let dataset = stitch_dataset(cfg, seed)?;
    let spec = dataset.spec.clone();
    let run = RunConfig {
        seed,
        ..cfg.run.clone()
    };
    let mut trainer = Trainer::new(run.clone(), dataset.clone())?;
    let losses = trainer.run()?;
    let models = trainer.plan_models(trainer.fit_inverse_dynamics()?.map(|x| x.0));
    let eval_seed = seed.wrapping_add(1_000);
    let mut planner = DiffusionPlanner::new(
        &models,
        planner_config(&run, run.target_value),
        spec.clone(),
        PhysicsParams::default(),
    )?;
    let ssd = evaluate(
        &layout,
        &mut planner,
        &spec,
        Task::FixedGoal,
        cfg.episodes,
        eval_seed,
        run.max_steps,
        None,
    )?;
    let (mut bc, _) = BcPolicy::fit(&dataset, &RegressorConfig { seed, ..cfg.bc.clone() })?;
    let bc_rows = evaluate(
        &layout,
        &mut bc,
        &spec,
        Task::FixedGoal,
        cfg.episodes,
        eval_seed,
        run.max_steps,
        None,
    )?;
    let random = evaluate(
        &layout,
        &mut RandomPolicy::default(),
        &spec,
        Task::FixedGoal,
        cfg.episodes,
        eval_seed,
        run.max_steps,
        None,
    )?;
    let (ssd_success, ssd_return) = rates(&ssd);
    let (bc_success, bc_return) = rates(&bc_rows);
    Ok(StitchSeedResult {
        seed,
        ssd_success,
        bc_success,
        random_success: rates(&random).0,
        ssd_return,
        bc_return,
        critic_loss: losses.iter().map(|l| l.0).collect(),
        diffusion_loss: losses.iter().map(|l| l.1).collect(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean of the first and of the last `fraction` of a loss curve.
pub fn head_tail_means(losses: &[f64], fraction: f64) -> (f64, f64) {
    let n = ((losses.len() as f64 * fraction).ceil() as usize)
        .max(1)
        .min(losses.len());
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&losses[..n]), mean(&losses[losses.len() - n..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_and_tail_means() {
        let xs: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(head_tail_means(&xs, 0.1), (1.5, 19.5));
        assert_eq!(head_tail_means(&[4.0], 0.1), (4.0, 4.0));
    }

    #[test]
    fn dataset_holds_only_the_two_routes() {
        let cfg = StitchConfig {
            transitions: 300,
            ..StitchConfig::default()
        };
        let ds = stitch_dataset(&cfg, 0).unwrap();
        let (b, c) = (cfg.b.center(), cfg.c.center());
        for ep in &ds.episodes {
            let g = [ep.desired_goal[0] as f64, ep.desired_goal[1] as f64];
            assert!(g == b || g == c, "unexpected goal {g:?}");
        }
        assert!(ds.episodes.iter().any(|e| e.desired_goal[0] as f64 == b[0]));
        assert!(ds.episodes.iter().any(|e| e.desired_goal[0] as f64 == c[0]));
    }
}
