//! Tweedie clean-sample estimation and the per-interval EMA tracker for the
//! pose marginal `p̄_t(c̄)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedule::DiffusionSchedule;

/// `x̂_0 = (x_t − σ_t ε̂) / α_t`.
pub fn tweedie_x0<T: Scalar>(
    schedule: &DiffusionSchedule<T>,
    t: usize,
    xt: &[T],
    eps_pred: &[T],
) -> Result<Vec<T>> {
    if t == 0 || t > schedule.num_steps() {
        return Err(Error::Argument(format!("tweedie step {t} outside [1, T]")));
    }
    if xt.len() != eps_pred.len() {
        return Err(Error::Argument(
            "noise prediction dimension mismatch".into(),
        ));
    }
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    if !(a > T::min_positive_value()) {
        return Err(Error::Numeric {
            t,
            detail: format!("alpha_t = {a} underflows"),
        });
    }
    let out: Vec<T> = xt
        .iter()
        .zip(eps_pred)
        .map(|(&x, &e)| (x - s * e) / a)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            t,
            detail: "non-finite Tweedie estimate".into(),
        });
    }
    Ok(out)
}

/// Smallest rate whose `n_ema`-step cumulative weight reaches 0.9:
/// `α = 1 − 0.1^{1/n_ema}`.
pub fn alpha_from_n_ema(n_ema: u64) -> Result<f64> {
    if n_ema == 0 {
        return Err(Error::Argument("n_ema must be >= 1".into()));
    }
    // exp_m1 keeps full relative precision for large n_ema.
    Ok(-((0.1f64).ln() / n_ema as f64).exp_m1())
}

/// One EMA simplex vector per block of `n_s` diffusion steps.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalEma<T> {
    num_steps: usize,
    steps_per_interval: usize,
    alpha: T,
    values: Vec<Vec<T>>,
}

impl<T: Scalar> IntervalEma<T> {
    pub const DEFAULT_INTERVALS: usize = 10;
    pub const DEFAULT_N_EMA: u64 = 100;

    /// `num_intervals` blocks over `[1, num_steps]`, initialized uniform.
    pub fn new(
        num_steps: usize,
        num_intervals: usize,
        num_categories: usize,
        alpha: T,
    ) -> Result<Self> {
        if num_intervals == 0 || num_intervals > num_steps {
            return Err(Error::Config(format!(
                "interval count {num_intervals} must lie in [1, {num_steps}]"
            )));
        }
        if num_categories == 0 {
            return Err(Error::Config("EMA needs at least one category".into()));
        }
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::Config(format!("EMA rate {alpha} outside (0, 1]")));
        }
        let u = T::one() / T::from_usize_lossy(num_categories);
        Ok(Self {
            num_steps,
            steps_per_interval: num_steps / num_intervals,
            alpha,
            values: vec![vec![u; num_categories]; num_intervals],
        })
    }

    /// Tracker initialized with one given simplex vector per interval.
    pub fn from_values(num_steps: usize, values: Vec<Vec<T>>, alpha: T) -> Result<Self> {
        let k = values.first().map_or(0, Vec::len);
        let mut ema = Self::new(num_steps, values.len(), k, alpha)?;
        if values.iter().any(|v| v.len() != k) {
            return Err(Error::Config(
                "EMA intervals disagree on category count".into(),
            ));
        }
        ema.values = values;
        Ok(ema)
    }

    pub fn num_intervals(&self) -> usize {
        self.values.len()
    }

    pub fn steps_per_interval(&self) -> usize {
        self.steps_per_interval
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// `⌊t / n_s⌋` clamped to the last interval.
    pub fn interval_of(&self, t: usize) -> usize {
        (t / self.steps_per_interval).min(self.values.len() - 1)
    }

    pub fn lookup(&self, t: usize) -> &[T] {
        &self.values[self.interval_of(t)]
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.values
    }

    /// `p̄ ← α·observed + (1 − α)·p̄` on the interval containing `t`.
    pub fn update(&mut self, t: usize, observed: &[T]) -> Result<()> {
        if t == 0 || t > self.num_steps {
            return Err(Error::Argument(format!(
                "EMA update step {t} outside [1, {}]",
                self.num_steps
            )));
        }
        let k = self.values[0].len();
        if observed.len() != k {
            return Err(Error::Argument(format!(
                "observation has {} categories, EMA has {k}",
                observed.len()
            )));
        }
        let sum: T = observed.iter().copied().sum();
        if observed.iter().any(|&p| !(p >= T::zero()))
            || (sum - T::one()).abs() > T::lit(1e-9).max(T::identity_tol())
        {
            return Err(Error::Argument(
                "EMA observation is not on the simplex".into(),
            ));
        }
        let a = self.alpha;
        let i = self.interval_of(t);
        for (v, &o) in self.values[i].iter_mut().zip(observed) {
            *v = a * o + (T::one() - a) * *v;
        }
        Ok(())
    }
}
