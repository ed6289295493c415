//! Policy evaluation, reference returns, normalized scores and the
//! target-value sweep.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::RunConfig;
use super::train::LoadedRun;
use crate::error::{Error, Result};
use crate::gamdp::GaMdpSpec;
use crate::io_util::write_atomic;
use crate::maze::{reset, MazeLayout, PhysicsParams, Task};
use crate::planner::{
    rollout, DiffusionPlanner, EpisodeResult, ExpertPolicy, PlannerConfig, Policy, RandomPolicy, RolloutConfig,
};
use crate::rng;

pub const METRICS_HEADER: &str = "seed,episode,steps,success,discounted_return,final_distance,normalized_score";
pub const SWEEP_HEADER: &str =
    "layout,target_value,episodes,success_rate,success_se,mean_return,return_se,mean_score,score_se";
pub const SWEEP_VALUES: [f64; 7] = [0.0125, 0.025, 0.05, 0.1, 0.2, 0.4, 0.8];

/// Mean discounted returns of the random and expert policies per layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct References {
    pub entries: BTreeMap<String, (f64, f64)>,
}

impl References {
    /// Lines of `layout r_random r_expert`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Config(format!("references line {}: bad number `{s}`", i + 1)))
            };
            if f.len() != 3 {
                return Err(Error::Config(format!(
                    "references line {}: expected `layout r_random r_expert`",
                    i + 1
                )));
            }
            entries.insert(f[0].to_string(), (num(f[1])?, num(f[2])?));
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# layout r_random r_expert\n");
        for (k, (r, e)) in &self.entries {
            s.push_str(&format!("{k} {r} {e}\n"));
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn get(&self, layout: &str) -> Result<(f64, f64)> {
        self.entries
            .get(layout)
            .copied()
            .ok_or_else(|| Error::MissingReferences(layout.to_string()))
    }
}

/// `100 · (R − R_random) / (R_expert − R_random)`.
pub fn normalized_score(ret: f64, refs: &References, layout: &str) -> Result<f64> {
    let (r, e) = refs.get(layout)?;
    if (e - r).abs() < 1e-12 {
        return Err(Error::InputDomain(format!("references for `{layout}` coincide ({r})")));
    }
    Ok(100.0 * (ret - r) / (e - r))
}

/// Sample mean and standard error (zero error for fewer than two samples).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub seed: u64,
    pub episode: usize,
    pub result: EpisodeResult,
}

/// Runs `episodes` rollouts; episode `i` draws its reset from its own
/// sub-stream of `seed`, so results do not depend on evaluation order.
pub fn evaluate(
    layout: &MazeLayout,
    policy: &mut dyn Policy,
    spec: &GaMdpSpec,
    task: Task,
    episodes: usize,
    seed: u64,
    max_steps: usize,
    refs: Option<&References>,
) -> Result<Vec<EvalRow>> {
    let cfg = RolloutConfig::new(spec, max_steps);
    let mut rows = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let (start, goal) = reset(layout, &mut rng::substream(seed, "eval-reset", i as u64), task)?;
        let episode_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut result = rollout(layout, policy, start, goal, &cfg, episode_seed)?;
        if let Some(r) = refs {
            result.normalized_score = normalized_score(result.discounted_return, r, &layout.name)?;
        }
        rows.push(EvalRow {
            seed,
            episode: i,
            result,
        });
    }
    Ok(rows)
}

/// Mean discounted returns of the uniform random policy and the
/// shortest-path expert under the evaluation reset distribution.
pub fn compute_references(
    layout: &MazeLayout,
    spec: &GaMdpSpec,
    task: Task,
    episodes: usize,
    seed: u64,
    max_steps: usize,
) -> Result<(f64, f64)> {
    let mean_return =
        |rows: Vec<EvalRow>| mean_se(&rows.iter().map(|r| r.result.discounted_return).collect::<Vec<_>>()).0;
    let random = evaluate(
        layout,
        &mut RandomPolicy::default(),
        spec,
        task,
        episodes,
        seed,
        max_steps,
        None,
    )?;
    let expert = evaluate(
        layout,
        &mut ExpertPolicy::default(),
        spec,
        task,
        episodes,
        seed,
        max_steps,
        None,
    )?;
    Ok((mean_return(random), mean_return(expert)))
}

pub fn metrics_csv(rows: &[EvalRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let e = &r.result;
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed,
            r.episode,
            e.steps,
            u8::from(e.success),
            e.discounted_return,
            e.final_distance,
            e.normalized_score
        ));
    }
    s
}

pub fn planner_config(cfg: &RunConfig, target_value: f64) -> PlannerConfig {
    PlannerConfig {
        replan_interval: cfg.replan_interval,
        action_mode: cfg.action_mode,
        target_value: target_value as f32,
        hold_on_goal: cfg.hold_on_goal,
        max_steps: cfg.max_steps,
        sample_steps: (cfg.sample_steps > 0).then_some(cfg.sample_steps),
    }
}

/// Evaluates a trained planner with its configured target value.
pub fn evaluate_run(
    run: &LoadedRun,
    layout: &MazeLayout,
    task: Task,
    episodes: usize,
    seed: u64,
    refs: Option<&References>,
) -> Result<Vec<EvalRow>> {
    let pc = planner_config(&run.config, run.config.target_value);
    let mut planner = DiffusionPlanner::new(&run.models, pc, run.spec.clone(), PhysicsParams::default())?;
    evaluate(
        layout,
        &mut planner,
        &run.spec,
        task,
        episodes,
        seed,
        run.config.max_steps,
        refs,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub layout: String,
    pub target_value: f64,
    pub episodes: usize,
    pub success_rate: f64,
    pub success_se: f64,
    pub mean_return: f64,
    pub return_se: f64,
    pub mean_score: f64,
    pub score_se: f64,
}

impl SweepRow {
    pub fn from_rows(layout: &str, target_value: f64, rows: &[EvalRow]) -> Self {
        let col = |f: fn(&EpisodeResult) -> f64| mean_se(&rows.iter().map(|r| f(&r.result)).collect::<Vec<_>>());
        let (success_rate, success_se) = col(|e| f64::from(u8::from(e.success)));
        let (mean_return, return_se) = col(|e| e.discounted_return);
        let (mean_score, score_se) = col(|e| e.normalized_score);
        Self {
            layout: layout.to_string(),
            target_value,
            episodes: rows.len(),
            success_rate,
            success_se,
            mean_return,
            return_se,
            mean_score,
            score_se,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.layout,
            self.target_value,
            self.episodes,
            self.success_rate,
            self.success_se,
            self.mean_return,
            self.return_se,
            self.mean_score,
            self.score_se
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// One row per target value for a trained run on its layout.
pub fn sweep_target_value(
    run: &LoadedRun,
    layout: &MazeLayout,
    values: &[f64],
    episodes: usize,
    seed: u64,
    refs: Option<&References>,
) -> Result<Vec<SweepRow>> {
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("target value {v} outside [0, 1]")));
        }
        let pc = planner_config(&run.config, v);
        let mut planner = DiffusionPlanner::new(&run.models, pc, run.spec.clone(), PhysicsParams::default())?;
        let rows = evaluate(
            layout,
            &mut planner,
            &run.spec,
            Task::FixedGoal,
            episodes,
            seed,
            run.config.max_steps,
            refs,
        )?;
        out.push(SweepRow::from_rows(&layout.name, v, &rows));
    }
    Ok(out)
}

/// Target value with the best mean score (mean return if scores are absent).
pub fn best_target_value(rows: &[SweepRow]) -> Option<f64> {
    let key = |r: &SweepRow| {
        if r.mean_score.is_nan() {
            r.mean_return
        } else {
            r.mean_score
        }
    };
    rows.iter()
        .max_by(|a, b| key(a).total_cmp(&key(b)))
        .map(|r| r.target_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamdp::GaMdpSpec;

    #[test]
    fn mean_se_matches_hand_values() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn references_round_trip_and_scores() {
        let mut r = References::default();
        r.entries.insert("umaze".into(), (0.1, 0.6));
        let back = References::parse(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert!((normalized_score(0.6, &r, "umaze").unwrap() - 100.0).abs() < 1e-12);
        assert!(normalized_score(0.1, &r, "umaze").unwrap().abs() < 1e-12);
        assert!(matches!(
            normalized_score(0.3, &r, "large"),
            Err(Error::MissingReferences(_))
        ));
        assert!(References::parse("umaze 0.1").is_err());
    }

    #[test]
    fn evaluation_is_order_independent_and_expert_beats_random() {
        let layout = MazeLayout::builtin("umaze").unwrap();
        let spec = GaMdpSpec::maze(0.98, 0.5, 200).unwrap();
        let all = evaluate(
            &layout,
            &mut ExpertPolicy::default(),
            &spec,
            Task::FixedGoal,
            4,
            3,
            200,
            None,
        )
        .unwrap();
        assert!(all.iter().all(|r| r.result.success));
        let again = evaluate(
            &layout,
            &mut ExpertPolicy::default(),
            &spec,
            Task::FixedGoal,
            4,
            3,
            200,
            None,
        )
        .unwrap();
        assert_eq!(metrics_csv(&all), metrics_csv(&again));
        let (rr, re) = compute_references(&layout, &spec, Task::FixedGoal, 4, 3, 200).unwrap();
        assert!(re > rr);
        let csv = metrics_csv(&all);
        assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn random_policy_rarely_crosses_the_large_maze() {
        let layout = MazeLayout::builtin("large").unwrap();
        let spec = GaMdpSpec::maze(0.98, 0.5, 100).unwrap();
        let rows = evaluate(
            &layout,
            &mut RandomPolicy::default(),
            &spec,
            Task::FixedGoal,
            50,
            0,
            100,
            None,
        )
        .unwrap();
        let rate = rows.iter().filter(|r| r.result.success).count() as f64 / rows.len() as f64;
        assert!(rate <= 0.04, "random success {rate}");
    }

    #[test]
    fn best_value_prefers_score() {
        let mk = |v: f64, s: f64| SweepRow {
            layout: "x".into(),
            target_value: v,
            episodes: 1,
            success_rate: 0.0,
            success_se: 0.0,
            mean_return: 1.0 - s / 100.0,
            return_se: 0.0,
            mean_score: s,
            score_se: 0.0,
        };
        assert_eq!(
            best_target_value(&[mk(0.1, 10.0), mk(0.2, 50.0), mk(0.4, 20.0)]),
            Some(0.2)
        );
    }
}
