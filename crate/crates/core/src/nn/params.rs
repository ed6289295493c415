use std::collections::HashMap;

use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered name → tensor map with a gradient buffer per parameter.
#[derive(Clone, Debug, Default)]
pub struct ParamRegistry<T> {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamRegistry<T> {
    pub fn new() -> Self {
        Self {
            names: vec![],
            index: HashMap::new(),
            values: vec![],
            grads: vec![],
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Shape(format!("duplicate parameter name `{name}`")));
        }
        let id = self.values.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Weight matrix `[fan_in, fan_out]`, uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<ParamId> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-a..a))).collect();
        self.add(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, T::one()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub(crate) fn value_at(&self, index: usize) -> &Tensor<T> {
        &self.values[index]
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Tensor<T>], &mut [Tensor<T>]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(T::zero()));
    }

    /// Adds gradients produced by a backward pass.
    pub fn accumulate(&mut self, grads: &super::graph::Gradients<T>) {
        for (i, g) in grads.params.iter().enumerate() {
            if let Some(g) = g {
                self.grads[i].add_assign(g);
            }
        }
    }

    /// Polyak averaging toward `online`: `self ← (1 − rate)·self + rate·online`.
    pub fn ema_update(&mut self, online: &Self, rate: f64) {
        let r = T::lit(rate);
        let keep = T::one() - r;
        for (dst, src) in self.values.iter_mut().zip(&online.values) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = keep * *d + r * *s;
            }
        }
    }

    pub fn copy_values_from(&mut self, other: &Self) {
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }

    /// `(name, tensor)` pairs with `prefix` prepended, converted to f32.
    pub fn export(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (format!("{prefix}{n}"), v.cast()))
            .collect()
    }

    /// Loads every parameter from `tensors` under `prefix`; names and shapes must match.
    pub fn import(&mut self, tensors: &[(String, Tensor<f32>)], prefix: &str) -> Result<()> {
        let lookup: HashMap<&str, &Tensor<f32>> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let key = format!("{prefix}{name}");
            let t = lookup
                .get(key.as_str())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks `{key}`")))?;
            if t.shape() != value.shape() {
                return Err(Error::Shape(format!(
                    "`{key}`: checkpoint {:?} vs model {:?}",
                    t.shape(),
                    value.shape()
                )));
            }
            *value = t.cast();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}
