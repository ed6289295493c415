//! Goal relabeling shared by critic and denoiser training.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::gamdp::{goal_reached, psi, GaMdpSpec, SubTrajectory};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoalSource {
    InWindow,
    OutOfWindow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelabelOutcome<T> {
    pub goal: Vec<T>,
    /// Smallest `k ∈ [1, h]` whose state reaches `goal`, if any.
    pub achieved_index: Option<usize>,
    /// Index drawn by the in-window branch.
    pub sampled_index: Option<usize>,
    pub source: GoalSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelabelStrategy {
    Mixed,
    HerFinal,
    AmUniform,
}

impl FromStr for RelabelStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(Self::Mixed),
            "her_final" => Ok(Self::HerFinal),
            "am_uniform" => Ok(Self::AmUniform),
            other => Err(Error::Config(format!("unknown relabel strategy `{other}`"))),
        }
    }
}

impl fmt::Display for RelabelStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mixed => "mixed",
            Self::HerFinal => "her_final",
            Self::AmUniform => "am_uniform",
        })
    }
}

/// Smallest `k ∈ [1, h]` with `goal_reached(states[k], goal)`.
pub fn achieved_index<T: Scalar>(x: &SubTrajectory<T>, goal: &[T], spec: &GaMdpSpec) -> Result<Option<usize>> {
    for k in 1..=x.horizon() {
        if goal_reached(x.state(k), goal, spec)? {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

fn out_of_window(x: &SubTrajectory<f32>, dataset: &OfflineDataset, rng: &mut Rng) -> Result<RelabelOutcome<f32>> {
    let spec = &dataset.spec;
    let goal = psi(dataset.sample_state(rng)?, spec.goal_dim)?;
    let achieved_index = achieved_index(x, &goal, spec)?;
    Ok(RelabelOutcome {
        goal,
        achieved_index,
        sampled_index: None,
        source: GoalSource::OutOfWindow,
    })
}

/// With probability `p_in_window` a uniform `k ∈ [1, h]` of the window,
/// otherwise a uniform state of the whole dataset.
pub fn relabel_mixed(
    x: &SubTrajectory<f32>,
    dataset: &OfflineDataset,
    p_in_window: f64,
    rng: &mut Rng,
) -> Result<RelabelOutcome<f32>> {
    if dataset.is_empty() {
        return Err(Error::InputDomain("relabeling needs a non-empty dataset".into()));
    }
    if rng.random_bool(p_in_window.clamp(0.0, 1.0)) {
        let spec = &dataset.spec;
        let k = rng.random_range(1..=x.horizon());
        let goal = psi(x.state(k), spec.goal_dim)?;
        let achieved_index = achieved_index(x, &goal, spec)?;
        Ok(RelabelOutcome {
            goal,
            achieved_index,
            sampled_index: Some(k),
            source: GoalSource::InWindow,
        })
    } else {
        out_of_window(x, dataset, rng)
    }
}

/// HER ablation: the window's final state becomes the goal.
pub fn relabel_her_final<T: Scalar>(x: &SubTrajectory<T>, goal_dim: usize) -> Result<RelabelOutcome<T>> {
    let h = x.horizon();
    Ok(RelabelOutcome {
        goal: psi(x.state(h), goal_dim)?,
        achieved_index: Some(h),
        sampled_index: Some(h),
        source: GoalSource::InWindow,
    })
}

/// AM ablation: a uniform dataset state, achievement checked against the window.
pub fn relabel_am_uniform(
    x: &SubTrajectory<f32>,
    dataset: &OfflineDataset,
    rng: &mut Rng,
) -> Result<RelabelOutcome<f32>> {
    out_of_window(x, dataset, rng)
}

/// Dispatches on the configured strategy.
pub fn relabel(
    strategy: RelabelStrategy,
    x: &SubTrajectory<f32>,
    dataset: &OfflineDataset,
    p_in_window: f64,
    rng: &mut Rng,
) -> Result<RelabelOutcome<f32>> {
    match strategy {
        RelabelStrategy::Mixed => relabel_mixed(x, dataset, p_in_window, rng),
        RelabelStrategy::HerFinal => relabel_her_final(x, dataset.spec.goal_dim),
        RelabelStrategy::AmUniform => relabel_am_uniform(x, dataset, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamdp::{subtraj_reward, Episode};
    use crate::rng;

    fn spec() -> GaMdpSpec {
        GaMdpSpec::maze(0.98, 0.5, 100).unwrap()
    }

    /// Window along the x axis with states two units apart.
    fn spread_window(h: usize) -> SubTrajectory<f32> {
        let mut states = Vec::new();
        for j in 0..=h {
            states.extend_from_slice(&[2.0 * j as f32, 0.0, 0.0, 0.0]);
        }
        SubTrajectory::new(states, vec![0.0; 2 * (h + 1)], 4, 2, 0).unwrap()
    }

    fn dataset_of(states: Vec<f32>) -> OfflineDataset {
        let n = states.len() / 4;
        let ep = Episode {
            states,
            actions: vec![0.0; 2 * n],
            desired_goal: vec![0.0, 0.0],
            terminated_at_goal: false,
        };
        OfflineDataset::new(spec(), 0, vec![ep]).unwrap()
    }

    #[test]
    fn in_window_draw_hits_its_index() {
        let x = spread_window(6);
        let ds = dataset_of(vec![100.0, 0.0, 0.0, 0.0, 101.0, 0.0, 0.0, 0.0]);
        let mut r = rng::stream(0, "relabel");
        for _ in 0..200 {
            let o = relabel_mixed(&x, &ds, 1.0, &mut r).unwrap();
            let k = o.sampled_index.unwrap();
            assert_eq!(o.achieved_index, Some(k));
            assert_eq!(o.goal, vec![2.0 * k as f32, 0.0]);
        }
    }

    #[test]
    fn out_of_window_coincidence_counts_as_achieved() {
        let x = spread_window(4);
        // every dataset state sits on window state 2
        let ds = dataset_of(vec![4.0, 0.0, 1.0, 1.0, 4.1, 0.0, 0.0, 0.0]);
        let o = relabel_am_uniform(&x, &ds, &mut rng::stream(1, "relabel")).unwrap();
        assert_eq!(o.source, GoalSource::OutOfWindow);
        assert_eq!(o.achieved_index, Some(2));
        let far = dataset_of(vec![50.0, 50.0, 0.0, 0.0, 60.0, 0.0, 0.0, 0.0]);
        let o = relabel_mixed(&x, &far, 0.0, &mut rng::stream(1, "relabel")).unwrap();
        assert_eq!(o.achieved_index, None);
    }

    #[test]
    fn single_state_dataset_gives_that_goal() {
        let x = spread_window(3);
        let ds = dataset_of(vec![7.0, 7.0, 0.0, 0.0, 7.0, 7.0, 0.0, 0.0]);
        let o = relabel_am_uniform(&x, &ds, &mut rng::stream(2, "r")).unwrap();
        assert_eq!(o.goal, vec![7.0, 7.0]);
    }

    #[test]
    fn her_final_is_always_rewarded() {
        let s = spec();
        let x = spread_window(5);
        let o = relabel_her_final(&x, 2).unwrap();
        assert_eq!(o.achieved_index, Some(5));
        assert_eq!(subtraj_reward(&x, &o.goal, &s).unwrap(), 1);
        let constant = SubTrajectory::new([3.0f32, 1.0, 0.0, 0.0].repeat(4), vec![0.0; 8], 4, 2, 0).unwrap();
        let o = relabel_her_final(&constant, 2).unwrap();
        assert_eq!(o.goal, vec![3.0, 1.0]);
        assert_eq!(o.achieved_index, Some(3));
    }

    #[test]
    fn achieved_index_is_smallest() {
        let s = spec();
        let x = SubTrajectory::new(
            vec![
                0.0f32, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.2, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0,
            ],
            vec![0.0; 8],
            4,
            2,
            0,
        )
        .unwrap();
        assert_eq!(achieved_index(&x, &[5.2, 0.0], &s).unwrap(), Some(1));
        // k = 0 never counts
        assert_eq!(achieved_index(&x, &[0.0, 0.0], &s).unwrap(), None);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(
            "her_final".parse::<RelabelStrategy>().unwrap(),
            RelabelStrategy::HerFinal
        );
        assert!("bogus".parse::<RelabelStrategy>().is_err());
        assert_eq!(RelabelStrategy::AmUniform.to_string(), "am_uniform");
    }
}
