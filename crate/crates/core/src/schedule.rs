//! Variance-preserving forward process.
//!
//! `x_t = α_t x_0 + σ_t ε` with a linear β schedule; `α_t = √ᾱ_t`,
//! `σ_t = √(1 − ᾱ_t)` and `ᾱ_t = ∏_{s ≤ t} (1 − β_s)`. Step `t = 0` is
//! clean data.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule<T> {
    num_steps: usize,
    alpha: Vec<T>,
    sigma: Vec<T>,
}

impl<T: Scalar> DiffusionSchedule<T> {
    pub const DEFAULT_STEPS: usize = 1000;
    pub const DEFAULT_BETA_MIN: f64 = 1e-4;
    pub const DEFAULT_BETA_MAX: f64 = 0.02;

    pub fn new(num_steps: usize, beta_min: T, beta_max: T) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::Config(format!(
                "schedule needs at least 2 steps, got {num_steps}"
            )));
        }
        if !(beta_min > T::zero() && beta_min < beta_max && beta_max < T::one()) {
            return Err(Error::Config(format!(
                "betas must satisfy 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let span = T::from_usize_lossy(num_steps - 1);
        let mut alpha = Vec::with_capacity(num_steps + 1);
        let mut sigma = Vec::with_capacity(num_steps + 1);
        alpha.push(T::one());
        sigma.push(T::zero());
        let mut alpha_bar = T::one();
        for t in 1..=num_steps {
            let frac = T::from_usize_lossy(t - 1) / span;
            let beta = beta_min + (beta_max - beta_min) * frac;
            alpha_bar = alpha_bar * (T::one() - beta);
            alpha.push(alpha_bar.sqrt());
            sigma.push((T::one() - alpha_bar).sqrt());
        }
        let sched = Self {
            num_steps,
            alpha,
            sigma,
        };
        if sched.sigma(num_steps) < T::lit(0.99) {
            return Err(Error::Config(format!(
                "schedule does not reach the noise endpoint: sigma_T = {} < 0.99",
                sched.sigma(num_steps)
            )));
        }
        Ok(sched)
    }

    pub fn linear_default() -> Self {
        Self::new(
            Self::DEFAULT_STEPS,
            T::lit(Self::DEFAULT_BETA_MIN),
            T::lit(Self::DEFAULT_BETA_MAX),
        )
        .expect("default schedule is valid")
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> T {
        self.alpha[t]
    }

    #[inline]
    pub fn sigma(&self, t: usize) -> T {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[T] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigma
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t > self.num_steps {
            return Err(Error::Argument(format!(
                "step {t} outside [0, {}]",
                self.num_steps
            )));
        }
        Ok(())
    }

    /// Samples `q_t(x_t | x_0)` given the standard normal draw `eps`.
    pub fn perturb(&self, x0: &[T], t: usize, eps: &[T]) -> Result<Vec<T>> {
        if t == 0 || t > self.num_steps {
            return Err(Error::Argument(format!(
                "perturb step {t} outside [1, {}]",
                self.num_steps
            )));
        }
        if x0.len() != eps.len() {
            return Err(Error::Argument(format!(
                "noise dimension {} does not match data dimension {}",
                eps.len(),
                x0.len()
            )));
        }
        let (a, s) = (self.alpha(t), self.sigma(t));
        Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + s * e).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightKind {
    ConstantOne,
    #[default]
    SigmaSquared,
}

/// Loss weighting `ω(t)` tabulated over `t ∈ [0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeight<T> {
    kind: WeightKind,
    values: Vec<T>,
}

impl<T: Scalar> LossWeight<T> {
    pub fn new(kind: WeightKind, schedule: &DiffusionSchedule<T>) -> Self {
        let values = match kind {
            WeightKind::ConstantOne => vec![T::one(); schedule.num_steps() + 1],
            WeightKind::SigmaSquared => schedule.sigmas().iter().map(|&s| s * s).collect(),
        };
        Self { kind, values }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    #[inline]
    pub fn at(&self, t: usize) -> T {
        self.values[t]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn first_step_closed_form() {
        let s = DiffusionSchedule::<f64>::linear_default();
        assert!((s.alpha(1) - (1.0f64 - 1e-4).sqrt()).abs() < 1e-15);
        assert!((s.alpha(1) - 0.99995).abs() < 1e-6);
    }

    #[test]
    fn variance_preserving_and_monotone() {
        let s = DiffusionSchedule::<f64>::new(50, 1e-3, 0.3).unwrap();
        for t in 0..=50 {
            let a = s.alpha(t);
            let g = s.sigma(t);
            assert!((a * a + g * g - 1.0).abs() < 1e-12);
            if t > 0 {
                assert!(a <= s.alpha(t - 1) && g >= s.sigma(t - 1));
            }
        }
        assert!(s.alpha(0) >= 0.999 && s.sigma(50) >= 0.99);
    }

    #[test]
    fn terminal_sigma_matches_extended_precision_product() {
        // Kahan-compensated log-sum as an independent recomputation.
        let s = DiffusionSchedule::<f64>::linear_default();
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for t in 1..=1000usize {
            let beta = 1e-4 + (0.02 - 1e-4) * ((t - 1) as f64) / 999.0;
            let y = (-beta).ln_1p() - comp;
            let tmp = sum + y;
            comp = (tmp - sum) - y;
            sum = tmp;
        }
        let sigma_t = (-sum.exp_m1()).sqrt();
        assert!((s.sigma(1000) - sigma_t).abs() < 1e-12);
        // Frozen from a 40-digit product: alpha_bar_T = 4.0358297653756833e-5.
        assert!((s.sigma(1000) - 0.999_979_820_647_569_9).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(DiffusionSchedule::<f64>::new(1, 1e-4, 0.02).is_err());
        assert!(DiffusionSchedule::<f64>::new(100, 0.02, 1e-4).is_err());
        assert!(DiffusionSchedule::<f64>::new(100, 0.0, 0.02).is_err());
    }

    #[test]
    fn perturb_cases() {
        let s = DiffusionSchedule::<f64>::linear_default();
        let out = s.perturb(&[1.0, 0.0], 10, &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![s.alpha(10), 0.0]);
        let out = s.perturb(&[0.0, 0.0], 10, &[0.3, -2.0]).unwrap();
        assert_eq!(out, vec![s.sigma(10) * 0.3, s.sigma(10) * -2.0]);
        assert!(s.perturb(&[0.0], 10, &[0.0, 1.0]).is_err());
        assert!(s.perturb(&[0.0], 0, &[0.0]).is_err());
    }

    #[test]
    fn perturb_moments_monte_carlo() {
        let s = DiffusionSchedule::<f64>::linear_default();
        let t = 400;
        let x0 = [1.5, -0.5];
        let n = 100_000;
        let mut r = rng::seeded(7);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let e: Vec<f64> = rng::standard_normal_vec(&mut r, 2);
            let x = s.perturb(&x0, t, &e).unwrap();
            for k in 0..2 {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        let var_true = s.sigma(t).powi(2);
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let se_mean = (var_true / n as f64).sqrt();
            assert!((mean - s.alpha(t) * x0[k]).abs() < 3.0 * se_mean);
            // SE of a sample variance of Gaussian data: σ²·√(2/n).
            assert!((var - var_true).abs() < 3.0 * var_true * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn weights() {
        let s = DiffusionSchedule::<f64>::linear_default();
        let w = LossWeight::new(WeightKind::SigmaSquared, &s);
        assert!((1..=1000).all(|t| w.at(t) > 0.0));
        assert_eq!(LossWeight::new(WeightKind::ConstantOne, &s).at(3), 1.0);
    }

    #[test]
    fn generic_over_f32() {
        let s = DiffusionSchedule::<f32>::linear_default();
        assert!((s.alpha(500).powi(2) + s.sigma(500).powi(2) - 1.0).abs() < 1e-6);
    }
}
