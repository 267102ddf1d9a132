use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky, Matrix};
use crate::rng;
use crate::scalar::Scalar;
use crate::schedule::DiffusionSchedule;

/// Component covariance. Isotropic components keep high-dimensional
/// priors (pixel space) cheap.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance<T> {
    Full(Matrix<T>),
    Isotropic(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component<T> {
    pub weight: T,
    pub mean: Vec<T>,
    pub cov: Covariance<T>,
    pub category: usize,
}

/// Toy joint density `p(x, c̄)`: a Gaussian mixture whose components are
/// labeled with a discrete pose category.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseLabeledMixture<T> {
    dim: usize,
    num_categories: usize,
    components: Vec<Component<T>>,
    clean: NoisyMixture<T>,
}

impl<T: Scalar> PoseLabeledMixture<T> {
    pub fn new(num_categories: usize, components: Vec<Component<T>>) -> Result<Self> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::Config("mixture has no components".into()))?;
        if dim == 0 {
            return Err(Error::Config("mixture dimension must be positive".into()));
        }
        if num_categories == 0 {
            return Err(Error::Config("mixture needs at least one category".into()));
        }
        let mut total = T::zero();
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::Config(format!(
                    "component {k} has dimension {}, expected {dim}",
                    c.mean.len()
                )));
            }
            if !(c.weight > T::zero() && c.weight <= T::one()) {
                return Err(Error::Config(format!(
                    "component {k} weight {} outside (0, 1]",
                    c.weight
                )));
            }
            if c.category >= num_categories {
                return Err(Error::Config(format!(
                    "component {k} category {} outside [0, {num_categories})",
                    c.category
                )));
            }
            match &c.cov {
                Covariance::Full(m) => {
                    if m.rows() != dim || m.cols() != dim {
                        return Err(Error::Config(format!(
                            "component {k} covariance is not {dim}x{dim}"
                        )));
                    }
                    if !m.is_symmetric(T::identity_tol()) {
                        return Err(Error::Config(format!(
                            "component {k} covariance is not symmetric"
                        )));
                    }
                }
                Covariance::Isotropic(v) => {
                    if !(*v > T::zero()) {
                        return Err(Error::Config(format!(
                            "component {k} isotropic variance must be positive"
                        )));
                    }
                }
            }
            total = total + c.weight;
        }
        if (total - T::one()).abs() > T::identity_tol() {
            return Err(Error::Config(format!(
                "component weights sum to {total}, expected 1"
            )));
        }
        for cat in 0..num_categories {
            if !components.iter().any(|c| c.category == cat) {
                return Err(Error::Config(format!(
                    "category {cat} has no mixture component; rectification requires p(c) != 0"
                )));
            }
        }
        let clean = NoisyMixture::build(&components, dim, T::one(), T::zero())
            .map_err(|e| Error::Config(format!("degenerate component covariance: {e}")))?;
        Ok(Self {
            dim,
            num_categories,
            components,
            clean,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn components(&self) -> &[Component<T>] {
        &self.components
    }

    /// Exact category marginal `p(c̄) = Σ_{k: c̄(k) = c̄} π_k`. The forward
    /// process does not touch labels, so this is also `p_t(c̄)` for every t.
    pub fn category_weights(&self) -> Vec<T> {
        let mut w = vec![T::zero(); self.num_categories];
        for c in &self.components {
            w[c.category] = w[c.category] + c.weight;
        }
        w
    }

    /// Clean density view (`t = 0`).
    pub fn clean(&self) -> &NoisyMixture<T> {
        &self.clean
    }

    /// Closed-form noisy marginal at step `t`: means `α_t μ_k`, covariances
    /// `α_t² Σ_k + σ_t² I`.
    pub fn at(&self, schedule: &DiffusionSchedule<T>, t: usize) -> Result<NoisyMixture<T>> {
        schedule.check_step(t)?;
        if t == 0 {
            return Ok(self.clean.clone());
        }
        NoisyMixture::build(
            &self.components,
            self.dim,
            schedule.alpha(t),
            schedule.sigma(t),
        )
        .map_err(|e| Error::Numeric {
            t,
            detail: e.to_string(),
        })
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Argument(format!(
                "point has dimension {}, mixture has {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn density(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        Ok(self.clean.density(x))
    }

    pub fn noisy_density(&self, schedule: &DiffusionSchedule<T>, t: usize, xt: &[T]) -> Result<T> {
        self.check_dim(xt)?;
        Ok(self.at(schedule, t)?.density(xt))
    }

    /// `∇_{x_t} log p_t(x_t)`.
    pub fn score(&self, schedule: &DiffusionSchedule<T>, t: usize, xt: &[T]) -> Result<Vec<T>> {
        self.check_dim(xt)?;
        Ok(self.at(schedule, t)?.score(xt))
    }

    /// Exact noise prediction `ε = −σ_t ∇ log p_t(x_t)`.
    pub fn eps_pretrain(
        &self,
        schedule: &DiffusionSchedule<T>,
        t: usize,
        xt: &[T],
    ) -> Result<Vec<T>> {
        self.check_dim(xt)?;
        Ok(self.at(schedule, t)?.eps(xt))
    }

    /// `p(c̄ | x_t)` as normalized per-category sums of responsibilities.
    pub fn category_posterior(
        &self,
        schedule: &DiffusionSchedule<T>,
        t: usize,
        xt: &[T],
    ) -> Result<Vec<T>> {
        self.check_dim(xt)?;
        Ok(self.at(schedule, t)?.category_posterior(xt))
    }

    /// Monte Carlo estimate of `p_t(c̄) = E_{x_t ~ p_t} p(c̄ | x_t)`.
    pub fn category_marginal(
        &self,
        schedule: &DiffusionSchedule<T>,
        t: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<T>> {
        if n_samples == 0 {
            return Err(Error::Argument(
                "category_marginal needs n_samples >= 1".into(),
            ));
        }
        let view = self.at(schedule, t)?;
        let mut rng = rng::seeded(seed);
        let mut acc = vec![T::zero(); self.num_categories];
        for _ in 0..n_samples {
            let x = self.sample_noisy(schedule, t, &mut rng);
            for (a, p) in acc.iter_mut().zip(view.category_posterior(&x)) {
                *a = *a + p;
            }
        }
        let n = T::from_usize_lossy(n_samples);
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    /// Draws `(x_0, component index)` from the clean mixture.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<T>, usize) {
        let weights: Vec<T> = self.components.iter().map(|c| c.weight).collect();
        let k = rng::categorical(rng, &weights);
        let z: Vec<T> = rng::standard_normal_vec(rng, self.dim);
        let comp = &self.clean.components[k];
        let offset = comp.factor.transform(&z);
        (linalg::add(&comp.mean, &offset), k)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.sample_labeled(rng).0
    }

    /// Draws `x_t = α_t x_0 + σ_t ε` with `x_0 ~ p`.
    pub fn sample_noisy<R: Rng + ?Sized>(
        &self,
        schedule: &DiffusionSchedule<T>,
        t: usize,
        rng: &mut R,
    ) -> Vec<T> {
        let x0 = self.sample(rng);
        if t == 0 {
            return x0;
        }
        let eps: Vec<T> = rng::standard_normal_vec(rng, self.dim);
        let (a, s) = (schedule.alpha(t), schedule.sigma(t));
        x0.iter().zip(&eps).map(|(&x, &e)| a * x + s * e).collect()
    }

    pub fn category_of(&self, component: usize) -> usize {
        self.components[component].category
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Factor<T> {
    Full(Cholesky<T>),
    Isotropic { var: T, dim: usize },
}

impl<T: Scalar> Factor<T> {
    fn log_det(&self) -> T {
        match self {
            Factor::Full(c) => c.log_det(),
            Factor::Isotropic { var, dim } => T::from_usize_lossy(*dim) * var.ln(),
        }
    }

    /// Squared Mahalanobis norm `vᵀ C⁻¹ v`.
    fn mahalanobis(&self, v: &[T]) -> T {
        match self {
            Factor::Full(c) => {
                let y = c.solve_lower(v);
                linalg::dot(&y, &y)
            }
            Factor::Isotropic { var, .. } => linalg::dot(v, v) / *var,
        }
    }

    fn solve(&self, v: &[T]) -> Vec<T> {
        match self {
            Factor::Full(c) => c.solve(v),
            Factor::Isotropic { var, .. } => v.iter().map(|&x| x / *var).collect(),
        }
    }

    fn transform(&self, z: &[T]) -> Vec<T> {
        match self {
            Factor::Full(c) => c.transform(z),
            Factor::Isotropic { var, .. } => {
                let s = var.sqrt();
                z.iter().map(|&x| x * s).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct NoisyComponent<T> {
    log_weight: T,
    mean: Vec<T>,
    /// Factor of the noisy covariance `α² Σ + σ² I`.
    factor: Factor<T>,
    /// `α Σ` (full) or `α v` (isotropic), used for posterior means.
    alpha_cov: Covariance<T>,
    clean_mean: Vec<T>,
    category: usize,
    log_norm: T,
}

/// The mixture's marginal at one diffusion step, with all factorizations
/// precomputed. `t = 0` is the clean density.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyMixture<T> {
    dim: usize,
    num_categories: usize,
    alpha: T,
    sigma: T,
    components: Vec<NoisyComponent<T>>,
}

/// Per-point responsibilities and component scores.
#[derive(Debug, Clone)]
pub struct Responsibilities<T> {
    pub gamma: Vec<T>,
    pub log_gamma: Vec<T>,
    /// `∇_x log N_k(x)` for every component.
    pub component_scores: Vec<Vec<T>>,
    pub log_density: T,
}

impl<T: Scalar> NoisyMixture<T> {
    fn build(components: &[Component<T>], dim: usize, alpha: T, sigma: T) -> Result<Self> {
        let num_categories = components.iter().map(|c| c.category + 1).max().unwrap_or(0);
        let log_2pi = (T::lit(2.0) * T::PI()).ln();
        let s2 = sigma * sigma;
        let comps = components
            .iter()
            .map(|c| {
                let (factor, alpha_cov) = match &c.cov {
                    Covariance::Full(m) => {
                        let noisy = m.affine_identity(alpha * alpha, s2);
                        let mut scaled = m.clone();
                        scaled = scaled.affine_identity(alpha, T::zero());
                        (
                            Factor::Full(Cholesky::new(&noisy)?),
                            Covariance::Full(scaled),
                        )
                    }
                    Covariance::Isotropic(v) => (
                        Factor::Isotropic {
                            var: alpha * alpha * *v + s2,
                            dim,
                        },
                        Covariance::Isotropic(alpha * *v),
                    ),
                };
                let log_norm =
                    -T::lit(0.5) * (T::from_usize_lossy(dim) * log_2pi + factor.log_det());
                Ok(NoisyComponent {
                    log_weight: c.weight.ln(),
                    mean: linalg::scale(&c.mean, alpha),
                    factor,
                    alpha_cov,
                    clean_mean: c.mean.clone(),
                    category: c.category,
                    log_norm,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            num_categories,
            alpha,
            sigma,
            components: comps,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    fn log_joint(&self, x: &[T]) -> Vec<T> {
        self.components
            .iter()
            .map(|c| {
                let d = linalg::sub(x, &c.mean);
                c.log_weight + c.log_norm - T::lit(0.5) * c.factor.mahalanobis(&d)
            })
            .collect()
    }

    pub fn log_density(&self, x: &[T]) -> T {
        linalg::log_sum_exp(&self.log_joint(x))
    }

    pub fn density(&self, x: &[T]) -> T {
        self.log_density(x).exp()
    }

    /// Component responsibilities `γ_k(x)`.
    pub fn responsibilities(&self, x: &[T]) -> Vec<T> {
        let lj = self.log_joint(x);
        let lse = linalg::log_sum_exp(&lj);
        lj.iter().map(|&l| (l - lse).exp()).collect()
    }

    pub fn responsibilities_with_scores(&self, x: &[T]) -> Responsibilities<T> {
        let lj = self.log_joint(x);
        let lse = linalg::log_sum_exp(&lj);
        let log_gamma: Vec<T> = lj.iter().map(|&l| l - lse).collect();
        let gamma = log_gamma.iter().map(|&l| l.exp()).collect();
        let component_scores = self
            .components
            .iter()
            .map(|c| {
                let d = linalg::sub(x, &c.mean);
                c.factor.solve(&d).into_iter().map(|v| -v).collect()
            })
            .collect();
        Responsibilities {
            gamma,
            log_gamma,
            component_scores,
            log_density: lse,
        }
    }

    pub fn score(&self, x: &[T]) -> Vec<T> {
        let r = self.responsibilities_with_scores(x);
        let mut s = vec![T::zero(); self.dim];
        for (g, cs) in r.gamma.iter().zip(&r.component_scores) {
            linalg::axpy(&mut s, *g, cs);
        }
        s
    }

    pub fn eps(&self, x: &[T]) -> Vec<T> {
        let sigma = self.sigma;
        self.score(x).into_iter().map(|v| -sigma * v).collect()
    }

    pub fn category_posterior(&self, x: &[T]) -> Vec<T> {
        self.aggregate(&self.responsibilities(x))
    }

    /// Sums per-component values into their categories.
    pub fn aggregate(&self, per_component: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_categories];
        for (c, &v) in self.components.iter().zip(per_component) {
            out[c.category] = out[c.category] + v;
        }
        out
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn component_categories(&self) -> impl Iterator<Item = usize> + '_ {
        self.components.iter().map(|c| c.category)
    }

    /// Exact posterior mean `E[x_0 | x_t]`.
    pub fn posterior_mean(&self, x: &[T]) -> Vec<T> {
        let gamma = self.responsibilities(x);
        let mut out = vec![T::zero(); self.dim];
        for (c, g) in self.components.iter().zip(gamma) {
            let d = linalg::sub(x, &c.mean);
            let w = c.factor.solve(&d);
            let shift = match &c.alpha_cov {
                Covariance::Full(m) => m.mul_vec(&w),
                Covariance::Isotropic(v) => linalg::scale(&w, *v),
            };
            let m = linalg::add(&c.clean_mean, &shift);
            linalg::axpy(&mut out, g, &m);
        }
        out
    }
}
