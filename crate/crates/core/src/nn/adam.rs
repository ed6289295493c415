use super::params::ParamRegistry;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for every parameter of one registry.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(reg: &ParamRegistry<T>, config: AdamConfig) -> Self {
        let m: Vec<Vec<T>> = reg.ids().map(|id| vec![T::zero(); reg.value(id).len()]).collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update from the accumulated gradients, then
    /// zeroes them.
    pub fn step(&mut self, reg: &mut ParamRegistry<T>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        let (values, grads) = reg.parts_mut();
        for (i, (val, grad)) in values.iter_mut().zip(grads.iter_mut()).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (p, g)) in val.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * *g;
                v[j] = b2 * v[j] + (T::one() - b2) * *g * *g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
            grad.fill(T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut reg = ParamRegistry::<f64>::new();
        reg.add("p", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5])).unwrap();
        let before = reg.clone();
        let mut opt = Adam::new(&reg, AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut reg);
        }
        assert_eq!(opt.steps(), 5);
        assert_eq!(reg.value(reg.id("p").unwrap()), before.value(before.id("p").unwrap()));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut reg = ParamRegistry::<f64>::new();
        let id = reg.add("p", Tensor::from_vec(1, 3, vec![0.0, 0.0, 0.0])).unwrap();
        reg.parts_mut().1[0].data_mut().copy_from_slice(&[3.0, -0.01, 100.0]);
        let mut opt = Adam::new(&reg, AdamConfig::default());
        opt.step(&mut reg);
        for (p, s) in reg.value(id).data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((p - s * 2e-4).abs() < 1e-9, "{p}");
        }
        assert!(reg.grad(id).data().iter().all(|g| *g == 0.0));
    }
}
