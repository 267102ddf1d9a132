//! Distribution rectification: reweighting a labeled prior so that its pose
//! marginal becomes a chosen target, in clean and noisy form, plus the
//! discrete auxiliary function `r` and its log-gradient.

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;
use crate::schedule::DiffusionSchedule;
use crate::worldmodel::PoseLabeledMixture;

/// Target pose marginal `f(c̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMarginal<T> {
    probs: Vec<T>,
}

fn check_simplex<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Argument(format!("{what} is empty")));
    }
    if v.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) {
        return Err(Error::Argument(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: T = v.iter().copied().sum();
    if (s - T::one()).abs() > T::identity_tol() {
        return Err(Error::Argument(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

impl<T: Scalar> TargetMarginal<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        check_simplex(&probs, "target marginal")?;
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        let p = T::one() / T::from_usize_lossy(k);
        Self { probs: vec![p; k] }
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `w(c̄) = f(c̄) / p(c̄)`. With `floor = Some(ε)` the marginal is clamped
/// below at `ε`; without a floor a non-positive entry is an error.
pub fn weight_function<T: Scalar>(
    target: &TargetMarginal<T>,
    marginal: &[T],
    floor: Option<T>,
) -> Result<Vec<T>> {
    if marginal.len() != target.len() {
        return Err(Error::Argument(format!(
            "marginal has {} categories, target has {}",
            marginal.len(),
            target.len()
        )));
    }
    target
        .probs
        .iter()
        .zip(marginal)
        .enumerate()
        .map(|(c, (&f, &p))| {
            let p = match floor {
                Some(eps) => p.max(eps),
                None if p > T::zero() => p,
                None => {
                    return Err(Error::Rectification {
                        category: c,
                        value: p.as_f64(),
                    })
                }
            };
            Ok(f / p)
        })
        .collect()
}

fn mixture_weights<T: Scalar>(
    m: &PoseLabeledMixture<T>,
    target: &TargetMarginal<T>,
) -> Result<Vec<T>> {
    if m.num_categories() != target.len() {
        return Err(Error::Argument(format!(
            "mixture has {} categories, target has {}",
            m.num_categories(),
            target.len()
        )));
    }
    weight_function(target, &m.category_weights(), None)
}

/// `Σ_c̄ w(c̄) p(c̄|x)`, exactly `w` when all weights equal `w`.
fn weighted_posterior<T: Scalar>(w: &[T], post: &[T]) -> T {
    if w.iter().all(|&v| v == w[0]) {
        w[0]
    } else {
        linalg::dot(w, post)
    }
}

/// Rectified clean density `p̃(x) = p(x) Σ_c̄ w(c̄) p(c̄|x)`.
pub fn rectified_density<T: Scalar>(
    m: &PoseLabeledMixture<T>,
    target: &TargetMarginal<T>,
    x: &[T],
) -> Result<T> {
    let w = mixture_weights(m, target)?;
    let p = m.density(x)?;
    let post = m.clean().category_posterior(x);
    Ok(p * weighted_posterior(&w, &post))
}

/// Rectified joint `p̃(x, c̄) = w(c̄) p(x, c̄)` for every category; sums to
/// [`rectified_density`].
pub fn rectified_joint<T: Scalar>(
    m: &PoseLabeledMixture<T>,
    target: &TargetMarginal<T>,
    x: &[T],
) -> Result<Vec<T>> {
    let w = mixture_weights(m, target)?;
    let p = m.density(x)?;
    let post = m.clean().category_posterior(x);
    Ok(w.iter().zip(&post).map(|(&wc, &pc)| p * wc * pc).collect())
}

/// Rectified noisy density `p̃_t(x_t) = p_t(x_t) Σ_c̄ w_t(c̄) p(c̄|x_t)`. The
/// labels are untouched by diffusion, so `p_t(c̄) = p(c̄)`.
pub fn rectified_noisy_density<T: Scalar>(
    m: &PoseLabeledMixture<T>,
    schedule: &DiffusionSchedule<T>,
    t: usize,
    target: &TargetMarginal<T>,
    xt: &[T],
) -> Result<T> {
    let w = mixture_weights(m, target)?;
    let p = m.noisy_density(schedule, t, xt)?;
    let post = m.category_posterior(schedule, t, xt)?;
    Ok(p * weighted_posterior(&w, &post))
}

/// Where `p(c̄ | x_t)` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosteriorSource {
    /// Exact mixture posterior.
    #[default]
    ExactMixture,
    /// Classifier applied to the Tweedie estimate `x̂_0`.
    ClassifierTweedie,
    /// Classifier applied to `x_t` directly.
    ClassifierDirect,
}

/// Where the marginal `p̄_t(c̄)` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalSource {
    /// Per-interval exponential moving average of observed posteriors.
    #[default]
    Ema,
    /// Monte Carlo expectation of the posterior under prior samples.
    ExactMc,
    /// Classification of a small batch of prior samples drawn once.
    FixedPresampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rectifier<T> {
    pub target: TargetMarginal<T>,
    pub posterior_source: PosteriorSource,
    pub marginal_source: MarginalSource,
    pub epsilon_floor: T,
    /// Relative step for finite-difference log-gradients.
    pub fd_step: T,
}

impl<T: Scalar> Rectifier<T> {
    pub const DEFAULT_FLOOR: f64 = 1e-4;
    pub const DEFAULT_FD_STEP: f64 = 1e-3;

    pub fn new(
        target: TargetMarginal<T>,
        posterior_source: PosteriorSource,
        marginal_source: MarginalSource,
        epsilon_floor: T,
        fd_step: T,
    ) -> Result<Self> {
        let k = T::from_usize_lossy(target.len());
        if !(epsilon_floor > T::zero() && epsilon_floor < T::one() / k) {
            return Err(Error::Config(format!(
                "epsilon_floor {epsilon_floor} outside (0, 1/K)"
            )));
        }
        if !(fd_step > T::zero()) {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        Ok(Self {
            target,
            posterior_source,
            marginal_source,
            epsilon_floor,
            fd_step,
        })
    }

    /// Uniform target, exact posterior, EMA marginal, default floor.
    pub fn uniform(k: usize) -> Self {
        Self::new(
            TargetMarginal::uniform(k),
            PosteriorSource::default(),
            MarginalSource::default(),
            T::lit(Self::DEFAULT_FLOOR),
            T::lit(Self::DEFAULT_FD_STEP),
        )
        .expect("default rectifier is valid")
    }

    pub fn num_categories(&self) -> usize {
        self.target.len()
    }

    /// Floored weights `f(c̄) / max(p̄(c̄), ε)`.
    pub fn weights(&self, marginal: &[T]) -> Vec<T> {
        weight_function(&self.target, marginal, Some(self.epsilon_floor))
            .expect("marginal length checked by caller")
    }

    /// `r = Σ_c̄ f(c̄)/p̄(c̄) · p(c̄|x_t)`.
    pub fn r_value(&self, posterior: &[T], marginal: &[T]) -> T {
        linalg::dot(&self.weights(marginal), posterior)
    }
}

/// Source of category posteriors `p(c̄|x_t)` and of `∇_{x_t} log Σ w p`.
pub trait PosteriorModel<T: Scalar>: Send + Sync {
    fn num_categories(&self) -> usize;

    fn posterior(&self, schedule: &DiffusionSchedule<T>, t: usize, xt: &[T]) -> Result<Vec<T>>;

    /// `∇_{x_t} log Σ_c̄ weights(c̄) p(c̄|x_t)`. The default uses central
    /// differences with per-coordinate step `fd_step·(1 + |x_i|)`.
    fn grad_log_r(
        &self,
        schedule: &DiffusionSchedule<T>,
        t: usize,
        xt: &[T],
        weights: &[T],
        fd_step: T,
    ) -> Result<Vec<T>> {
        let log_r = |x: &[T]| -> Result<T> {
            Ok(linalg::dot(weights, &self.posterior(schedule, t, x)?).ln())
        };
        let mut probe = xt.to_vec();
        let mut grad = Vec::with_capacity(xt.len());
        for i in 0..xt.len() {
            let h = fd_step * (T::one() + xt[i].abs());
            probe[i] = xt[i] + h;
            let up = log_r(&probe)?;
            probe[i] = xt[i] - h;
            let down = log_r(&probe)?;
            probe[i] = xt[i];
            grad.push((up - down) / (T::lit(2.0) * h));
        }
        check_finite(&grad, t, xt)?;
        Ok(grad)
    }
}

pub(crate) fn check_finite<T: Scalar>(v: &[T], t: usize, xt: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            t,
            detail: format!("non-finite log-r gradient at x_t = {xt:?}"),
        })
    }
}

/// Exact mixture posterior with an analytic log-r gradient.
#[derive(Debug, Clone)]
pub struct ExactPosterior<T> {
    mixture: PoseLabeledMixture<T>,
}

impl<T: Scalar> ExactPosterior<T> {
    pub fn new(mixture: PoseLabeledMixture<T>) -> Self {
        Self { mixture }
    }

    pub fn mixture(&self) -> &PoseLabeledMixture<T> {
        &self.mixture
    }
}

impl<T: Scalar> PosteriorModel<T> for ExactPosterior<T> {
    fn num_categories(&self) -> usize {
        self.mixture.num_categories()
    }

    fn posterior(&self, schedule: &DiffusionSchedule<T>, t: usize, xt: &[T]) -> Result<Vec<T>> {
        self.mixture.category_posterior(schedule, t, xt)
    }

    /// With `ρ_k ∝ w_{c̄(k)} γ_k`: `∇ log r = Σ_k ρ_k g_k − Σ_k γ_k g_k`,
    /// where `g_k` is the score of component `k`. Evaluated in log space so
    /// that far-tail points do not underflow.
    fn grad_log_r(
        &self,
        schedule: &DiffusionSchedule<T>,
        t: usize,
        xt: &[T],
        weights: &[T],
        _fd_step: T,
    ) -> Result<Vec<T>> {
        let view = self.mixture.at(schedule, t)?;
        if xt.len() != view.dim() {
            return Err(Error::Argument(
                "point dimension does not match mixture".into(),
            ));
        }
        let r = view.responsibilities_with_scores(xt);
        let cats: Vec<usize> = view.component_categories().collect();
        let log_rho: Vec<T> = r
            .log_gamma
            .iter()
            .zip(&cats)
            .map(|(&lg, &c)| {
                if weights[c] > T::zero() {
                    lg + weights[c].ln()
                } else {
                    T::neg_infinity()
                }
            })
            .collect();
        let lse = linalg::log_sum_exp(&log_rho);
        let mut grad = vec![T::zero(); xt.len()];
        for ((&lr, &g), s) in log_rho.iter().zip(&r.gamma).zip(&r.component_scores) {
            let rho = if lse.is_finite() {
                (lr - lse).exp()
            } else {
                T::zero()
            };
            linalg::axpy(&mut grad, rho - g, s);
        }
        check_finite(&grad, t, xt)?;
        Ok(grad)
    }
}
