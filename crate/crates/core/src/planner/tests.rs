use super::*;
use crate::dataset::{collect, CollectConfig};
use crate::diffusion::UnetConfig;
use crate::maze::{Cell, PhysicsParams};
use crate::rng::{stream, STREAM_INIT};

fn spec() -> GaMdpSpec {
    GaMdpSpec::maze(0.98, 0.5, 200).unwrap()
}

fn small_regressor() -> RegressorConfig {
    RegressorConfig {
        iterations: 4000,
        ..RegressorConfig::default()
    }
}

#[test]
fn maze_defaults_replan_every_half_horizon() {
    let c = PlannerConfig::maze(16);
    assert_eq!(c.replan_interval, 8);
    assert_eq!(c.action_mode, ActionMode::InverseDynamics);
    assert!(c.validate(16).is_ok());
    assert!(PlannerConfig {
        replan_interval: 17,
        ..c.clone()
    }
    .validate(16)
    .is_err());
    assert!(PlannerConfig { target_value: 1.5, ..c }.validate(16).is_err());
    assert_eq!(
        "first_k_actions".parse::<ActionMode>().unwrap(),
        ActionMode::FirstKActions
    );
}

#[test]
fn inverse_dynamics_recovers_executed_actions() {
    let layout = MazeLayout::builtin("medium").unwrap();
    let ds = collect(&layout, &spec(), &CollectConfig::default(), 6000, 3).unwrap();
    let (f, mse) = fit_inverse_dynamics(&ds, &small_regressor()).unwrap();
    assert!(mse < 0.01, "held-out mse {mse}");
    let (f2, mse2) = fit_inverse_dynamics(&ds, &small_regressor()).unwrap();
    assert_eq!(mse, mse2);
    assert_eq!(f.net.params.export(""), f2.net.params.export(""));

    // Transitions of a fresh collection run that never touch a wall.
    let params = PhysicsParams::default();
    let fresh = collect(&layout, &spec(), &CollectConfig::default(), 2000, 99).unwrap();
    let sp = spec();
    let (mut ok, mut total, mut worst) = (0, 0, 0.0f64);
    for ep in &fresh.episodes {
        for t in 0..ep.len(&sp) - 1 {
            let s = EnvState::from_slice(ep.state(&sp, t));
            let a = ep.action(&sp, t);
            let s2 = EnvState::from_slice(ep.state(&sp, t + 1));
            let unconstrained = (0..2).all(|d| {
                let v = (1.0 - params.friction) * s.velocity[d] + a[d] as f64 * params.dt;
                v.abs() < params.v_max && (v - s2.velocity[d]).abs() < 1e-5
            });
            if !unconstrained {
                continue;
            }
            let got = f.infer(ep.state(&sp, t), ep.state(&sp, t + 1));
            let err = (0..2).map(|d| (got[d] - a[d]).abs() as f64).fold(0.0, f64::max);
            worst = worst.max(err);
            total += 1;
            ok += usize::from(err < 0.05);
        }
    }
    assert!(
        ok as f64 >= 0.95 * total as f64,
        "{ok}/{total} within 0.05, worst {worst}"
    );
}

#[test]
fn degenerate_and_deterministic_rollouts() {
    let layout = MazeLayout::builtin("umaze").unwrap();
    let spec = spec();
    let start = EnvState::at_rest(Cell { row: 1, col: 1 }.center());
    let goal = Cell { row: 3, col: 1 }.center();
    let cfg0 = RolloutConfig {
        max_steps: 0,
        ..RolloutConfig::new(&spec, 0)
    };
    let r = rollout(&layout, &mut ExpertPolicy::default(), start, goal, &cfg0, 1).unwrap();
    assert!(!r.success);
    assert_eq!(r.steps, 0);
    let cfg = RolloutConfig::new(&spec, 60);
    let a = rollout(&layout, &mut RandomPolicy::default(), start, goal, &cfg, 5).unwrap();
    let b = rollout(&layout, &mut RandomPolicy::default(), start, goal, &cfg, 5).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn expert_reaches_every_reachable_cell_pair() {
    let layout = MazeLayout::builtin("medium").unwrap();
    let spec = spec();
    let cfg = RolloutConfig::new(&spec, 200);
    let free = layout.free_cells();
    for (i, from) in free.iter().enumerate() {
        for to in free.iter().skip(i % 3).step_by(3) {
            if from == to {
                continue;
            }
            let r = rollout(
                &layout,
                &mut ExpertPolicy::default(),
                EnvState::at_rest(from.center()),
                to.center(),
                &cfg,
                0,
            )
            .unwrap();
            assert!(r.success, "{from:?} -> {to:?}");
            assert_eq!(r.discounted_return, spec.gamma.powi(r.steps as i32));
        }
    }
}

/// Expert until the goal is first reached, then the hold regulator.
struct ExpertThenHold {
    expert: ExpertPolicy,
    holding: bool,
    tolerance: f64,
}

impl Policy for ExpertThenHold {
    fn reset(&mut self, seed: u64) {
        self.expert.reset(seed);
        self.holding = false;
    }

    fn act(&mut self, layout: &MazeLayout, state: &EnvState, goal: [f64; 2]) -> Result<[f64; 2]> {
        self.holding |= dist(state.position, goal) <= self.tolerance;
        if self.holding {
            Ok(hold_action(state, goal, &PhysicsParams::default()))
        } else {
            self.expert.act(layout, state, goal)
        }
    }
}

#[test]
fn hold_keeps_distance_non_increasing_after_arrival() {
    let layout = MazeLayout::builtin("large").unwrap();
    let spec = spec();
    let cfg = RolloutConfig {
        terminate_on_goal: false,
        ..RolloutConfig::new(&spec, 120)
    };
    let free = layout.free_cells();
    for to in free.iter().step_by(4) {
        let from = free[0];
        if *to == from {
            continue;
        }
        let mut p = ExpertThenHold {
            expert: ExpertPolicy::default(),
            holding: false,
            tolerance: spec.goal_tolerance,
        };
        let r = rollout(&layout, &mut p, EnvState::at_rest(from.center()), to.center(), &cfg, 0).unwrap();
        assert!(r.success);
        let held = &r.states[r.steps..];
        let d: Vec<f64> = held.iter().map(|s| dist([s[0], s[1]], to.center())).collect();
        assert!(
            d.iter().all(|v| *v <= spec.goal_tolerance),
            "{to:?} left the goal ball: {d:?}"
        );
        // From the first state whose regulator output is unsaturated onward.
        let params = PhysicsParams::default();
        let settled = held
            .iter()
            .position(|s| {
                let st = EnvState {
                    position: [s[0], s[1]],
                    velocity: [s[2], s[3]],
                };
                (0..2).all(|k| (to.center()[k] - st.position[k] - 0.9 * st.velocity[k]).abs() <= params.accel_max)
            })
            .expect("the regulator settles");
        assert!(d[settled..].windows(2).all(|w| w[1] <= w[0] + 1e-12), "{to:?}: {d:?}");
    }
}

fn toy_models() -> PlanModels {
    let mut rng = stream(1, STREAM_INIT);
    let cfg = UnetConfig {
        token_dim: 16,
        heads: 2,
        levels: 2,
        ..UnetConfig::new(4, 4, 2, 2)
    };
    let norm = Normalizer {
        lo: vec![0.0, 0.0, -2.0, -2.0, -1.0, -1.0],
        hi: vec![5.0, 5.0, 2.0, 2.0, 1.0, 1.0],
    };
    PlanModels {
        unet: CondPromptUnet::new(cfg, &mut rng).unwrap(),
        schedule: NoiseSchedule::cosine(10).unwrap(),
        norm,
        inverse_dynamics: Some(InverseDynamicsModel::new(4, 2, &[8], &mut rng).unwrap()),
    }
}

#[test]
fn plan_buffer_never_serves_stale_actions_and_plans_start_at_the_state() {
    let layout = MazeLayout::builtin("umaze").unwrap();
    let models = toy_models();
    for mode in [ActionMode::FirstKActions, ActionMode::InverseDynamics] {
        let cfg = PlannerConfig {
            replan_interval: 2,
            action_mode: mode,
            hold_on_goal: true,
            ..PlannerConfig::maze(4)
        };
        let mut planner = DiffusionPlanner::new(&models, cfg, spec(), PhysicsParams::default()).unwrap();
        planner.reset(3);
        let mut s = EnvState::at_rest([1.4, 1.6]);
        let goal = Cell { row: 3, col: 1 }.center();
        let mut served = 0;
        for _ in 0..9 {
            let before = planner.pending();
            let a = planner.act(&layout, &s, goal).unwrap();
            if before == 0 {
                let plan = planner.last_plan().unwrap();
                assert_eq!(plan.state(0), &s.to_vec::<f32>()[..]);
                served = 0;
            }
            served += 1;
            assert!(served <= 2);
            s = step(&s, a, &PhysicsParams::default(), &layout);
        }
    }
}

#[test]
fn planner_rollout_is_deterministic_in_seed() {
    let layout = MazeLayout::builtin("umaze").unwrap();
    let models = toy_models();
    let cfg = PlannerConfig {
        replan_interval: 2,
        ..PlannerConfig::maze(4)
    };
    let rc = RolloutConfig::new(&spec(), 10);
    let start = EnvState::at_rest([1.5, 1.5]);
    let goal = Cell { row: 3, col: 1 }.center();
    let mut p = DiffusionPlanner::new(&models, cfg, spec(), PhysicsParams::default()).unwrap();
    let a = rollout(&layout, &mut p, start, goal, &rc, 8).unwrap();
    let b = rollout(&layout, &mut p, start, goal, &rc, 8).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn inverse_dynamics_mode_needs_a_model() {
    let mut models = toy_models();
    models.inverse_dynamics = None;
    assert!(DiffusionPlanner::new(&models, PlannerConfig::maze(4), spec(), PhysicsParams::default()).is_err());
}
