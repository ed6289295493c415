//! Small bounded MLP regressor shared by inverse dynamics and behaviour cloning.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Graph, Mlp, ParamRegistry, Tensor};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorConfig {
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            iterations: 3000,
            batch: 128,
            lr: 1e-3,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// MLP with per-column input affine scaling; predictions are clamped to `±bound`.
#[derive(Clone, Debug)]
pub struct Regressor {
    pub params: ParamRegistry<f32>,
    pub mlp: Mlp,
    pub in_shift: Vec<f32>,
    pub in_scale: Vec<f32>,
    pub bound: f32,
}

impl Regressor {
    pub fn new(in_dim: usize, out_dim: usize, hidden: &[usize], bound: f32, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamRegistry::new();
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(out_dim);
        let mlp = Mlp::new(&mut params, "mlp", &sizes, Activation::Silu, rng)?;
        Ok(Self {
            params,
            mlp,
            in_shift: vec![0.0; in_dim],
            in_scale: vec![1.0; in_dim],
            bound,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_shift.len()
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    fn prepare(&self, xs: &[f32]) -> Tensor<f32> {
        let d = self.in_dim();
        let data = xs
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.in_shift[i % d]) * self.in_scale[i % d])
            .collect();
        Tensor::from_vec(xs.len() / d, d, data)
    }

    fn record(&self, g: &mut Graph<'_, f32>, xs: &[f32]) -> crate::nn::NodeId {
        let x = g.input(self.prepare(xs));
        self.mlp.forward(g, x)
    }

    /// Row-major predictions for row-major inputs.
    pub fn predict(&self, xs: &[f32]) -> Vec<f32> {
        let mut g = Graph::new(&self.params);
        let y = self.record(&mut g, xs);
        g.value(y)
            .data()
            .iter()
            .map(|v| v.clamp(-self.bound, self.bound))
            .collect()
    }

    fn mse(&self, xs: &[f32], ys: &[f32]) -> f64 {
        let p = self.predict(xs);
        p.iter().zip(ys).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / ys.len().max(1) as f64
    }

    /// Fits on `(xs, ys)` row pairs; returns the model and the held-out MSE.
    pub fn fit(
        xs: &[f32],
        ys: &[f32],
        in_dim: usize,
        out_dim: usize,
        bound: f32,
        cfg: &RegressorConfig,
    ) -> Result<(Self, f64)> {
        let n = xs.len() / in_dim;
        if n == 0 || xs.len() != n * in_dim || ys.len() != n * out_dim {
            return Err(Error::InputDomain(
                "regression needs matching, non-empty inputs and targets".into(),
            ));
        }
        let mut init = rng::stream(cfg.seed, rng::STREAM_INIT);
        let mut data = rng::stream(cfg.seed, rng::STREAM_DATA);
        let mut model = Self::new(in_dim, out_dim, &cfg.hidden, bound, &mut init)?;
        for j in 0..in_dim {
            let col = (0..n).map(|i| xs[i * in_dim + j]);
            let (lo, hi) = col.fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            model.in_shift[j] = 0.5 * (lo + hi);
            model.in_scale[j] = if hi - lo > 1e-6 { 2.0 / (hi - lo) } else { 1.0 };
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut data);
        let n_hold = if n > 10 {
            ((n as f64 * cfg.holdout_fraction) as usize).max(1)
        } else {
            0
        };
        let (hold, train) = order.split_at(n_hold);
        let gather = |idx: &[usize]| {
            let x: Vec<f32> = idx
                .iter()
                .flat_map(|i| xs[i * in_dim..(i + 1) * in_dim].iter().copied())
                .collect();
            let y: Vec<f32> = idx
                .iter()
                .flat_map(|i| ys[i * out_dim..(i + 1) * out_dim].iter().copied())
                .collect();
            (x, y)
        };
        let mut opt = Adam::new(
            &model.params,
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        let ones = vec![1.0f32; out_dim];
        for _ in 0..cfg.iterations {
            let idx: Vec<usize> = (0..cfg.batch.min(train.len()))
                .map(|_| train[data.random_range(0..train.len())])
                .collect();
            let (bx, by) = gather(&idx);
            let grads = {
                let mut g = Graph::new(&model.params);
                let pred = model.record(&mut g, &bx);
                let target = Tensor::from_vec(idx.len(), out_dim, by);
                let loss = g.weighted_mse(pred, &target, &ones);
                g.backward(loss)
            };
            model.params.accumulate(&grads);
            opt.step(&mut model.params);
        }
        let held = if hold.is_empty() { gather(train) } else { gather(hold) };
        let mse = model.mse(&held.0, &held.1);
        Ok((model, mse))
    }

    pub fn export(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        let mut out = self.params.export(prefix);
        let d = self.in_dim();
        out.push((
            format!("{prefix}in_shift"),
            Tensor::new(vec![d], self.in_shift.clone()).expect("non-empty"),
        ));
        out.push((
            format!("{prefix}in_scale"),
            Tensor::new(vec![d], self.in_scale.clone()).expect("non-empty"),
        ));
        out.push((format!("{prefix}bound"), Tensor::scalar(self.bound)));
        out
    }

    pub fn import(&mut self, tensors: &[(String, Tensor<f32>)], prefix: &str) -> Result<()> {
        self.params.import(tensors, prefix)?;
        let get = |k: &str| {
            tensors
                .iter()
                .find(|(n, _)| *n == format!("{prefix}{k}"))
                .map(|(_, t)| t.data().to_vec())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks `{prefix}{k}`")))
        };
        self.in_shift = get("in_shift")?;
        self.in_scale = get("in_scale")?;
        self.bound = get("bound")?[0];
        Ok(())
    }
}
