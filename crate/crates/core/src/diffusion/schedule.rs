use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

/// Discrete DDPM variance schedule. Step indices run over `1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<T> {
    n: usize,
    alpha: Vec<T>,
    alpha_bar: Vec<T>,
    beta: Vec<T>,
    sigma: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Squared-cosine `alpha_bar` profile; `alpha_bar` is the running product
    /// of the clipped per-step `alpha`.
    pub fn cosine(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InputDomain(format!("diffusion needs at least 2 steps, got {n}")));
        }
        let f = |t: f64| {
            let u = (t / n as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
            u.cos().powi(2)
        };
        let mut alpha = Vec::with_capacity(n);
        let mut alpha_bar = Vec::with_capacity(n);
        let mut beta = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        let mut prod = 1.0f64;
        for i in 1..=n {
            let b = (1.0 - f(i as f64) / f((i - 1) as f64)).clamp(0.0, MAX_BETA);
            let a = 1.0 - b;
            let prev = prod;
            prod *= a;
            alpha.push(T::lit(a));
            beta.push(T::lit(b));
            alpha_bar.push(T::lit(prod));
            sigma.push(T::lit(b * (1.0 - prev) / (1.0 - prod)));
        }
        Ok(Self {
            n,
            alpha,
            alpha_bar,
            beta,
            sigma,
        })
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize) -> usize {
        assert!((1..=self.n).contains(&i), "diffusion step {i} outside 1..={}", self.n);
        i - 1
    }

    pub fn alpha(&self, i: usize) -> T {
        self.alpha[self.idx(i)]
    }

    pub fn beta(&self, i: usize) -> T {
        self.beta[self.idx(i)]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, i: usize) -> T {
        if i == 0 {
            T::one()
        } else {
            self.alpha_bar[self.idx(i)]
        }
    }

    /// Posterior variance `β̃_i`.
    pub fn sigma(&self, i: usize) -> T {
        self.sigma[self.idx(i)]
    }

    /// Closed-form marginal `√ᾱ_i x0 + √(1−ᾱ_i) ε`.
    pub fn forward_noise(&self, x0: &[T], i: usize, eps: &[T]) -> Result<Vec<T>> {
        if !(1..=self.n).contains(&i) {
            return Err(Error::OutOfRange(format!("diffusion step {i} outside 1..={}", self.n)));
        }
        if x0.len() != eps.len() {
            return Err(Error::DimMismatch {
                expected: x0.len(),
                got: eps.len(),
            });
        }
        let ab = self.alpha_bar(i);
        let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * *x + b * *e).collect())
    }

    /// `n` step indices `N = τ_n > … > τ_1 ≥ 1`, evenly spread.
    pub fn strided(&self, n: usize) -> Vec<usize> {
        let n = n.clamp(1, self.n);
        let mut out: Vec<usize> = (1..=n)
            .rev()
            .map(|j| ((j * self.n) as f64 / n as f64).round() as usize)
            .collect();
        out.dedup();
        out
    }
}

pub fn gaussian<T: Scalar>(n: usize, rng: &mut Rng) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_is_well_formed() {
        let s = NoiseSchedule::<f64>::cosine(50).unwrap();
        let mut prod = 1.0;
        for i in 1..=50 {
            let a = s.alpha(i);
            assert!(a > 0.0 && a < 1.0);
            prod *= a;
            assert!(((s.alpha_bar(i) - prod) / prod).abs() < 1e-12);
            assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
            assert!(s.sigma(i) >= 0.0 && s.sigma(i) <= s.beta(i));
        }
        assert!(s.alpha_bar(1) > 0.99);
        assert!(s.alpha_bar(50) < 1e-3);
        assert!(NoiseSchedule::<f64>::cosine(1).is_err());
    }

    #[test]
    fn forward_noise_at_clean_limit_and_bounds() {
        let s = NoiseSchedule::<f64>::cosine(1000).unwrap();
        let x = s.forward_noise(&[0.3, -0.2], 1, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 0.3).abs() < 0.01);
        assert!(s.forward_noise(&[0.0], 0, &[0.0]).is_err());
        assert!(s.forward_noise(&[0.0], 1001, &[0.0]).is_err());
    }

    #[test]
    fn strided_subsequence_starts_at_n_and_descends() {
        let s = NoiseSchedule::<f64>::cosine(50).unwrap();
        let seq = s.strided(5);
        assert_eq!(seq, vec![50, 40, 30, 20, 10]);
        assert_eq!(s.strided(50), (1..=50).rev().collect::<Vec<_>>());
    }
}
