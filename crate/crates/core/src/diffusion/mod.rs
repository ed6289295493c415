//! DDPM machinery and the condition-prompted denoiser.

mod schedule;
mod unet;

use rand::Rng as _;

pub use schedule::{gaussian, NoiseSchedule, COSINE_OFFSET, MAX_BETA};
pub use unet::{CondPromptUnet, Condition, UnetConfig};

use crate::error::{Error, Result};
use crate::gamdp::SubTrajectory;
use crate::nn::{Graph, NodeId, Tensor};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Per-coordinate affine map of `state ‖ action` rows onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub lo: Vec<f32>,
    pub hi: Vec<f32>,
}

impl Normalizer {
    /// Ranges of the given rows; degenerate columns get a unit-width range.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f32]>, width: usize) -> Result<Self> {
        let mut lo = vec![f32::INFINITY; width];
        let mut hi = vec![f32::NEG_INFINITY; width];
        let mut any = false;
        for row in rows {
            if row.len() != width {
                return Err(Error::DimMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            any = true;
            for (j, v) in row.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        if !any {
            return Err(Error::InputDomain("cannot fit a normalizer to no data".into()));
        }
        for j in 0..width {
            if hi[j] - lo[j] < 1e-6 {
                lo[j] -= 0.5;
                hi[j] += 0.5;
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> usize {
        self.lo.len()
    }

    pub fn normalize_col(&self, j: usize, v: f32) -> f32 {
        2.0 * (v - self.lo[j]) / (self.hi[j] - self.lo[j]) - 1.0
    }

    pub fn denormalize_col(&self, j: usize, v: f32) -> f32 {
        (v + 1.0) * 0.5 * (self.hi[j] - self.lo[j]) + self.lo[j]
    }

    /// Normalizes a flat buffer of rows of this width.
    pub fn normalize(&self, xs: &[f32]) -> Vec<f32> {
        xs.iter()
            .enumerate()
            .map(|(i, v)| self.normalize_col(i % self.width(), *v))
            .collect()
    }

    pub fn denormalize(&self, xs: &[f32]) -> Vec<f32> {
        xs.iter()
            .enumerate()
            .map(|(i, v)| self.denormalize_col(i % self.width(), *v))
            .collect()
    }

    /// A goal is normalized with the leading state columns it projects from.
    pub fn normalize_goal(&self, goal: &[f32]) -> Vec<f32> {
        goal.iter()
            .enumerate()
            .map(|(j, v)| self.normalize_col(j, *v))
            .collect()
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let n = self.width();
        vec![
            (
                "norm/lo".into(),
                Tensor::new(vec![n], self.lo.clone()).expect("non-empty"),
            ),
            (
                "norm/hi".into(),
                Tensor::new(vec![n], self.hi.clone()).expect("non-empty"),
            ),
        ]
    }

    pub fn from_tensors(tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let get = |k: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == k)
                .map(|(_, t)| t.data().to_vec())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks `{k}`")))
        };
        let (lo, hi) = (get("norm/lo")?, get("norm/hi")?);
        if lo.len() != hi.len() {
            return Err(Error::Shape("normalizer bounds differ in length".into()));
        }
        Ok(Self { lo, hi })
    }
}

/// Per-column loss weights: 1 on state columns, `action_weight` on actions.
pub fn column_weights<T: Scalar>(state_dim: usize, action_dim: usize, action_weight: f64) -> Vec<T> {
    let mut w = vec![T::one(); state_dim];
    w.extend(std::iter::repeat_n(T::lit(action_weight), action_dim));
    w
}

/// Records the ε-prediction loss for normalized windows `x0`
/// (`[batch * (h+1), state+action]`) onto `g`.
#[allow(clippy::too_many_arguments)]
pub fn ddpm_loss<T: Scalar>(
    net: &CondPromptUnet<T>,
    g: &mut Graph<'_, T>,
    schedule: &NoiseSchedule<T>,
    x0: &Tensor<T>,
    goals: &Tensor<T>,
    values: &[T],
    action_weight: f64,
    rng: &mut Rng,
) -> NodeId {
    let c = &net.config;
    let batch = values.len();
    let per = c.tokens() * c.channels();
    assert_eq!(x0.len(), batch * per, "ddpm_loss batch shape");
    let steps: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let eps: Vec<T> = gaussian(x0.len(), rng);
    let mut xi = Vec::with_capacity(x0.len());
    for (b, &i) in steps.iter().enumerate() {
        let r = b * per..(b + 1) * per;
        xi.extend(
            schedule
                .forward_noise(&x0.data()[r.clone()], i, &eps[r])
                .expect("valid step"),
        );
    }
    let xin = g.input(Tensor::from_vec(batch * c.tokens(), c.channels(), xi));
    let pred = net.forward(g, xin, &steps, goals, values);
    let target = Tensor::from_vec(batch * c.tokens(), c.channels(), eps);
    g.weighted_mse(pred, &target, &column_weights(c.state_dim, c.action_dim, action_weight))
}

/// Ancestral sampling of one trajectory per condition, returned in data units.
///
/// With `n_steps = Some(m)` only `m` evenly strided steps are taken. When a
/// condition carries an inpaint state, token 0's state is overwritten after
/// every step and equals that state exactly in the output.
pub fn reverse_sample<T: Scalar>(
    net: &CondPromptUnet<T>,
    schedule: &NoiseSchedule<T>,
    norm: &Normalizer,
    conds: &[Condition],
    n_steps: Option<usize>,
    rng: &mut Rng,
) -> Result<Vec<SubTrajectory<f32>>> {
    let c = &net.config;
    if conds.is_empty() {
        return Ok(vec![]);
    }
    if norm.width() != c.channels() {
        return Err(Error::DimMismatch {
            expected: c.channels(),
            got: norm.width(),
        });
    }
    for cond in conds {
        cond.validate(c.goal_dim, c.state_dim)?;
    }
    let batch = conds.len();
    let (l0, ch, sd) = (c.tokens(), c.channels(), c.state_dim);
    let per = l0 * ch;
    let goals: Vec<T> = conds
        .iter()
        .flat_map(|k| norm.normalize_goal(&k.goal))
        .map(|v| T::lit(v as f64))
        .collect();
    let goals = Tensor::from_vec(batch, c.goal_dim, goals);
    let values: Vec<T> = conds.iter().map(|k| T::lit(k.value as f64)).collect();
    let inpaint: Vec<Option<Vec<T>>> = conds
        .iter()
        .map(|k| {
            k.inpaint_state.as_ref().map(|s| {
                s.iter()
                    .enumerate()
                    .map(|(j, v)| T::lit(norm.normalize_col(j, *v) as f64))
                    .collect()
            })
        })
        .collect();
    let apply_inpaint = |x: &mut [T]| {
        for (b, s) in inpaint.iter().enumerate() {
            if let Some(s) = s {
                x[b * per..b * per + sd].copy_from_slice(s);
            }
        }
    };

    let mut x: Vec<T> = gaussian(batch * per, rng);
    apply_inpaint(&mut x);
    let seq = match n_steps {
        Some(m) => schedule.strided(m),
        None => (1..=schedule.steps()).rev().collect(),
    };
    let one = T::one();
    let lim = T::one();
    for (j, &t) in seq.iter().enumerate() {
        let prev = seq.get(j + 1).copied().unwrap_or(0);
        let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(prev));
        let alpha = ab / ab_prev;
        let beta = one - alpha;
        let coef1 = ab_prev.sqrt() * beta / (one - ab);
        let coef2 = alpha.sqrt() * (one - ab_prev) / (one - ab);
        let var = beta * (one - ab_prev) / (one - ab);
        let eps = net.predict(
            Tensor::from_vec(batch * l0, ch, x.clone()),
            &vec![t; batch],
            &goals,
            &values,
        );
        let z: Vec<T> = if prev > 0 {
            gaussian(x.len(), rng)
        } else {
            vec![T::zero(); x.len()]
        };
        let sd_noise = var.max(T::zero()).sqrt();
        for (i, xv) in x.iter_mut().enumerate() {
            let x0 = ((*xv - (one - ab).sqrt() * eps.data()[i]) / ab.sqrt())
                .max(-lim)
                .min(lim);
            *xv = coef1 * x0 + coef2 * *xv + sd_noise * z[i];
        }
        apply_inpaint(&mut x);
    }
    let mut out = Vec::with_capacity(batch);
    for (b, cond) in conds.iter().enumerate() {
        let rows: Vec<f32> = x[b * per..(b + 1) * per]
            .iter()
            .map(|v| v.f64().clamp(-1.0, 1.0) as f32)
            .collect();
        let mut joint = norm.denormalize(&rows);
        if let Some(s) = &cond.inpaint_state {
            joint[..sd].copy_from_slice(s);
        }
        out.push(SubTrajectory::from_joint(&joint, sd, c.action_dim, 0)?);
    }
    Ok(out)
}

/// Normalized joint rows of a batch of windows, as a `[batch * (h+1), C]` tensor.
pub fn windows_to_tensor<T: Scalar>(windows: &[SubTrajectory<f32>], norm: &Normalizer) -> Tensor<T> {
    let width = norm.width();
    let mut data = Vec::new();
    for w in windows {
        data.extend(norm.normalize(&w.to_joint()).into_iter().map(|v| T::lit(v as f64)));
    }
    let rows = data.len() / width;
    Tensor::from_vec(rows, width, data)
}

#[cfg(test)]
mod tests;
