//! Score-distillation engine: SDS, VSD with an exact particle-mixture
//! variational score, USD and its single-category control variant, the
//! back-and-forth time scheduler and gradient-norm alignment.

use rand::Rng;
use rayon::prelude::*;

use crate::classifier::{DirectPosterior, PointClassifier, TweediePosterior};
use crate::error::{Error, Result};
use crate::estimator::{alpha_from_n_ema, IntervalEma};
use crate::linalg;
use crate::metrics;
use crate::rectify::{ExactPosterior, MarginalSource, PosteriorModel, PosteriorSource, Rectifier};
use crate::rng;
use crate::scalar::Scalar;
use crate::schedule::{DiffusionSchedule, LossWeight, WeightKind};
use crate::worldmodel::{PoseLabeledMixture, Renderer};

/// Parameters above this magnitude abort a run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sds,
    Vsd,
    Usd,
    Ctrl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sds, Method::Vsd, Method::Usd, Method::Ctrl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sds => "sds",
            Method::Vsd => "vsd",
            Method::Usd => "usd",
            Method::Ctrl => "ctrl",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// How the variational noise prediction `ε_φ` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VariationalScore {
    /// `ε_φ = −σ_t ∇ log q_t`, `q_t = (1/n) Σ_j N(α_t g(θ_j, c), σ_t² I)`.
    #[default]
    AnalyticParticleMixture,
    /// Each particle's own Gaussian only: `ε_φ = (x_t − α_t g(θ_i, c)) / σ_t`.
    SingleParticleExact,
}

/// The optimized parameter vectors `θ^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<T> {
    particles: Vec<Vec<T>>,
    seed: u64,
}

impl<T: Scalar> ParticleSet<T> {
    pub fn new(particles: Vec<Vec<T>>, seed: u64) -> Result<Self> {
        let d = particles
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Config("particle set needs at least one particle".into()))?;
        if d == 0 || particles.iter().any(|p| p.len() != d) {
            return Err(Error::Config(
                "particles must share a positive dimension".into(),
            ));
        }
        if particles.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("particles must be finite".into()));
        }
        Ok(Self { particles, seed })
    }

    /// `n` particles `center + spread·z`, `z ~ N(0, I)`.
    pub fn gaussian(n: usize, center: &[T], spread: T, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let particles = (0..n)
            .map(|_| {
                let z: Vec<T> = rng::standard_normal_vec(&mut r, center.len());
                center
                    .iter()
                    .zip(&z)
                    .map(|(&c, &e)| c + spread * e)
                    .collect()
            })
            .collect();
        Self::new(particles, seed)
    }

    /// `n` independent draws from the clean prior.
    pub fn from_prior(prior: &PoseLabeledMixture<T>, n: usize, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        Self::new((0..n).map(|_| prior.sample(&mut r)).collect(), seed)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particles(&self) -> &[Vec<T>] {
        &self.particles
    }

    pub fn get(&self, i: usize) -> &[T] {
        &self.particles[i]
    }
}

/// Prior, renderer and forward process shared by every method.
#[derive(Debug, Clone)]
pub struct World<T> {
    pub prior: PoseLabeledMixture<T>,
    pub renderer: Renderer<T>,
    pub schedule: DiffusionSchedule<T>,
}

impl<T: Scalar> World<T> {
    pub fn new(
        prior: PoseLabeledMixture<T>,
        renderer: Renderer<T>,
        schedule: DiffusionSchedule<T>,
    ) -> Result<Self> {
        if renderer.dim() != prior.dim() {
            return Err(Error::Config(format!(
                "renderer output dimension {} does not match prior dimension {}",
                renderer.dim(),
                prior.dim()
            )));
        }
        Ok(Self {
            prior,
            renderer,
            schedule,
        })
    }

    /// Identity renderer over the prior's space, default schedule.
    pub fn identity(prior: PoseLabeledMixture<T>) -> Self {
        let renderer = Renderer::identity(prior.dim());
        Self {
            prior,
            renderer,
            schedule: DiffusionSchedule::linear_default(),
        }
    }

    fn num_steps(&self) -> usize {
        self.schedule.num_steps()
    }
}

/// Kernel classifier used by the classifier posterior sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierSettings<T> {
    pub length_scale: T,
    pub temperature: T,
}

impl<T: Scalar> Default for ClassifierSettings<T> {
    fn default() -> Self {
        Self {
            length_scale: T::one(),
            temperature: T::lit(0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig<T> {
    pub method: Method,
    pub eta1: T,
    /// Accepted for completeness; the analytic variational score has no
    /// parameters to train.
    pub eta2: T,
    pub iters: usize,
    /// `(t, c, ε)` draws per particle per iteration.
    pub batch: usize,
    /// Inclusive step range when the back-and-forth scheduler is off.
    pub t_range: (usize, usize),
    pub bnf_n_i: Option<usize>,
    pub grad_norm_align: bool,
    pub control_category: Option<usize>,
    pub rectifier: Rectifier<T>,
    /// Unnormalized distribution over renderer poses; `None` is uniform.
    pub pose_weights: Option<Vec<T>>,
    pub weight: WeightKind,
    pub variational: VariationalScore,
    pub ema_intervals: usize,
    pub n_ema: u64,
    /// Samples per interval for Monte Carlo marginals.
    pub marginal_samples: usize,
    /// Prior samples classified once for the presampled marginal.
    pub presample_batch: usize,
    pub classifier: ClassifierSettings<T>,
    /// Particle and EMA snapshot period in iterations; 0 keeps only the
    /// initial and final state.
    pub snapshot_every: usize,
    pub seed: u64,
}

impl<T: Scalar> DistillConfig<T> {
    /// Defaults for a `k`-category prior over a `num_steps` schedule.
    pub fn new(method: Method, iters: usize, eta1: T, k: usize, num_steps: usize) -> Self {
        let lo = ((num_steps as f64) * 0.02).round() as usize;
        let hi = ((num_steps as f64) * 0.98).round() as usize;
        Self {
            method,
            eta1,
            eta2: eta1,
            iters,
            batch: 1,
            t_range: (lo.max(1), hi.min(num_steps)),
            bnf_n_i: None,
            grad_norm_align: false,
            control_category: None,
            rectifier: Rectifier::uniform(k),
            pose_weights: None,
            weight: WeightKind::SigmaSquared,
            variational: VariationalScore::AnalyticParticleMixture,
            ema_intervals: IntervalEma::<T>::DEFAULT_INTERVALS,
            n_ema: IntervalEma::<T>::DEFAULT_N_EMA,
            marginal_samples: 4096,
            presample_batch: 8,
            classifier: ClassifierSettings::default(),
            snapshot_every: 0,
            seed: 0,
        }
    }

    pub fn validate(&self, world: &World<T>) -> Result<()> {
        let k = world.prior.num_categories();
        let steps = world.num_steps();
        if !(self.eta1 > T::zero() && self.eta1.is_finite()) {
            return Err(Error::Config(format!(
                "eta1 must be positive, got {}",
                self.eta1
            )));
        }
        if !(self.eta2 > T::zero() && self.eta2.is_finite()) {
            return Err(Error::Config(format!(
                "eta2 must be positive, got {}",
                self.eta2
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        let (lo, hi) = self.t_range;
        if !(1 <= lo && lo < hi && hi <= steps) {
            return Err(Error::Config(format!(
                "t_range ({lo}, {hi}) must satisfy 1 <= lo < hi <= {steps}"
            )));
        }
        if self.bnf_n_i == Some(0) {
            return Err(Error::Config("bnf_n_i must be >= 1".into()));
        }
        match (self.method, self.control_category) {
            (Method::Ctrl, None) => {
                return Err(Error::Config(
                    "control method requires control_category".into(),
                ))
            }
            (Method::Ctrl, Some(c)) if c >= k => {
                return Err(Error::Config(format!(
                    "control_category {c} outside 0..{k}"
                )))
            }
            (Method::Ctrl, Some(_)) => {}
            (m, Some(_)) => {
                return Err(Error::Config(format!(
                    "control_category is only valid for ctrl, not {}",
                    m.name()
                )))
            }
            (_, None) => {}
        }
        if self.rectifier.num_categories() != k {
            return Err(Error::Config(format!(
                "rectifier target has {} categories, prior has {k}",
                self.rectifier.num_categories()
            )));
        }
        if let Some(w) = &self.pose_weights {
            if w.len() != world.renderer.num_poses() {
                return Err(Error::Config(format!(
                    "{} pose weights for {} renderer poses",
                    w.len(),
                    world.renderer.num_poses()
                )));
            }
            if w.iter().any(|&v| !(v >= T::zero() && v.is_finite()))
                || w.iter().all(|&v| v == T::zero())
            {
                return Err(Error::Config(
                    "pose weights must be nonnegative with positive sum".into(),
                ));
            }
        }
        if self.ema_intervals == 0 || self.ema_intervals > steps {
            return Err(Error::Config(format!(
                "ema_intervals must lie in [1, {steps}]"
            )));
        }
        if self.n_ema == 0 {
            return Err(Error::Config("n_ema must be >= 1".into()));
        }
        if self.marginal_samples == 0 || self.presample_batch == 0 {
            return Err(Error::Config("marginal sample counts must be >= 1".into()));
        }
        if !(self.classifier.length_scale > T::zero() && self.classifier.temperature > T::zero()) {
            return Err(Error::Config(
                "classifier length scale and temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Back-and-forth step range for `iter`: `2·n_i` equal iteration blocks;
/// over the first `n_i` the lower bound moves from `T − T/n_i` to `0.02T`,
/// over the last `n_i` the upper bound moves from `0.98T` to `T/n_i`.
pub fn bnf_interval(
    iter: usize,
    total_iters: usize,
    n_i: usize,
    num_steps: usize,
) -> Result<(usize, usize)> {
    if n_i == 0 {
        return Err(Error::Argument("n_i must be >= 1".into()));
    }
    if iter >= total_iters {
        return Err(Error::Argument(format!(
            "iteration {iter} outside 0..{total_iters}"
        )));
    }
    let t = num_steps as f64;
    let blocks = 2 * n_i;
    let block = (iter * blocks / total_iters).min(blocks - 1);
    let low_end = 0.02 * t;
    let high_start = 0.98 * t;
    let span = t / n_i as f64;
    let frac = |b: usize| {
        if n_i == 1 {
            1.0
        } else {
            b as f64 / (n_i - 1) as f64
        }
    };
    let (lo, hi) = if block < n_i {
        let start = t - span;
        (start + frac(block) * (low_end - start), high_start)
    } else {
        (
            low_end,
            high_start + frac(block - n_i) * (span - high_start),
        )
    };
    let hi = (hi.round() as usize).min(num_steps);
    let lo = (lo.round() as usize).clamp(1, hi.saturating_sub(1).max(1));
    Ok((lo, hi))
}

/// Rescales `secondary` to the norm of `primary`; a zero `secondary` stays
/// zero.
pub fn grad_norm_align<T: Scalar>(primary: &[T], secondary: &[T]) -> Vec<T> {
    let ns = linalg::norm(secondary);
    if ns == T::zero() {
        return vec![T::zero(); secondary.len()];
    }
    linalg::scale(secondary, linalg::norm(primary) / ns)
}

/// Variational noise prediction for particle `own` at pose `pose`.
pub fn variational_eps<T: Scalar>(
    vs: VariationalScore,
    ps: &ParticleSet<T>,
    world: &World<T>,
    t: usize,
    pose: usize,
    own: usize,
    xt: &[T],
) -> Result<Vec<T>> {
    world.schedule.check_step(t)?;
    if t == 0 {
        return Err(Error::Argument("variational score needs t >= 1".into()));
    }
    if own >= ps.len() {
        return Err(Error::Argument(format!(
            "particle {own} outside 0..{}",
            ps.len()
        )));
    }
    let (a, s) = (world.schedule.alpha(t), world.schedule.sigma(t));
    let residual = |theta: &[T]| -> Result<Vec<T>> {
        let g = world.renderer.render(theta, pose)?;
        Ok(xt
            .iter()
            .zip(&g)
            .map(|(&x, &gi)| (x - a * gi) / s)
            .collect())
    };
    match vs {
        VariationalScore::SingleParticleExact => residual(ps.get(own)),
        VariationalScore::AnalyticParticleMixture => {
            let residuals = ps
                .particles()
                .iter()
                .map(|th| residual(th))
                .collect::<Result<Vec<_>>>()?;
            let half = T::lit(0.5);
            let logits: Vec<T> = residuals
                .iter()
                .map(|r| -half * linalg::dot(r, r))
                .collect();
            let gamma = linalg::softmax(&logits, T::one());
            let mut eps = vec![T::zero(); xt.len()];
            for (g, r) in gamma.iter().zip(&residuals) {
                linalg::axpy(&mut eps, *g, r);
            }
            Ok(eps)
        }
    }
}

/// Per-interval estimate of the prior's category marginal `p̄_t(c̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTracker<T> {
    source: MarginalSource,
    intervals: IntervalEma<T>,
}

impl<T: Scalar> MarginalTracker<T> {
    pub fn new(world: &World<T>, cfg: &DistillConfig<T>) -> Result<Self> {
        let posterior = posterior_model(world, cfg)?;
        Self::with_posterior(world, cfg, posterior.as_ref())
    }

    fn with_posterior(
        world: &World<T>,
        cfg: &DistillConfig<T>,
        posterior: &dyn PosteriorModel<T>,
    ) -> Result<Self> {
        let steps = world.num_steps();
        let k = world.prior.num_categories();
        let n_t = cfg.ema_intervals;
        let alpha = T::lit(alpha_from_n_ema(cfg.n_ema)?);
        let source = cfg.rectifier.marginal_source;
        let intervals = match source {
            MarginalSource::Ema => IntervalEma::new(steps, n_t, k, alpha)?,
            MarginalSource::ExactMc => {
                let values = if cfg.rectifier.posterior_source == PosteriorSource::ExactMixture {
                    // The exact posterior averages to the mixing weights at every t.
                    vec![world.prior.category_weights(); n_t]
                } else {
                    let probe = IntervalEma::<T>::new(steps, n_t, k, alpha)?;
                    let ns = probe.steps_per_interval();
                    (0..n_t)
                        .map(|i| {
                            let lo = (i * ns).max(1);
                            let hi = if i + 1 == n_t {
                                steps
                            } else {
                                ((i + 1) * ns - 1).max(lo)
                            };
                            let mut r = rng::substream(cfg.seed, u64::MAX - 1 - i as u64);
                            let mut acc = vec![T::zero(); k];
                            for _ in 0..cfg.marginal_samples {
                                let t = r.random_range(lo..=hi);
                                let x = world.prior.sample_noisy(&world.schedule, t, &mut r);
                                let p = posterior.posterior(&world.schedule, t, &x)?;
                                linalg::axpy(&mut acc, T::one(), &p);
                            }
                            Ok(linalg::scale(
                                &acc,
                                T::one() / T::from_usize_lossy(cfg.marginal_samples),
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                IntervalEma::from_values(steps, values, alpha)?
            }
            MarginalSource::FixedPresampled => {
                let mut r = rng::substream(cfg.seed, u64::MAX);
                let mut acc = vec![T::zero(); k];
                for _ in 0..cfg.presample_batch {
                    let x = world.prior.sample(&mut r);
                    let p = posterior.posterior(&world.schedule, 0, &x)?;
                    linalg::axpy(&mut acc, T::one(), &p);
                }
                let mean = linalg::scale(&acc, T::one() / T::from_usize_lossy(cfg.presample_batch));
                IntervalEma::from_values(steps, vec![mean; n_t], alpha)?
            }
        };
        Ok(Self { source, intervals })
    }

    pub fn source(&self) -> MarginalSource {
        self.source
    }

    pub fn lookup(&self, t: usize) -> &[T] {
        self.intervals.lookup(t)
    }

    pub fn values(&self) -> &[Vec<T>] {
        self.intervals.values()
    }

    pub fn ema(&self) -> &IntervalEma<T> {
        &self.intervals
    }

    /// One EMA update per touched interval with the mean of that
    /// iteration's observations. Fixed sources ignore observations.
    pub fn observe(&mut self, observations: &[(usize, Vec<T>)]) -> Result<()> {
        if self.source != MarginalSource::Ema || observations.is_empty() {
            return Ok(());
        }
        let n_t = self.intervals.num_intervals();
        let k = observations[0].1.len();
        let mut sums = vec![(0usize, 0usize, vec![T::zero(); k]); n_t];
        for (t, p) in observations {
            let slot = &mut sums[self.intervals.interval_of(*t)];
            if slot.0 == 0 {
                slot.1 = *t;
            }
            slot.0 += 1;
            linalg::axpy(&mut slot.2, T::one(), p);
        }
        for (count, t, sum) in sums {
            if count > 0 {
                let mean = linalg::scale(&sum, T::one() / T::from_usize_lossy(count));
                let total: T = mean.iter().copied().sum();
                let mean = linalg::scale(&mean, T::one() / total);
                self.intervals.update(t, &mean)?;
            }
        }
        Ok(())
    }
}

/// Posterior model selected by the rectifier's posterior source.
pub fn posterior_model<T: Scalar>(
    world: &World<T>,
    cfg: &DistillConfig<T>,
) -> Result<Box<dyn PosteriorModel<T>>> {
    let make_classifier = || {
        PointClassifier::from_mixture(
            &world.prior,
            cfg.classifier.length_scale,
            cfg.classifier.temperature,
        )
    };
    Ok(match cfg.rectifier.posterior_source {
        PosteriorSource::ExactMixture => Box::new(ExactPosterior::new(world.prior.clone())),
        PosteriorSource::ClassifierTweedie => Box::new(TweediePosterior {
            prior: world.prior.clone(),
            classifier: make_classifier()?,
        }),
        PosteriorSource::ClassifierDirect => Box::new(DirectPosterior {
            classifier: make_classifier()?,
        }),
    })
}

/// One sampled `(t, pose, ε)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw<T> {
    pub t: usize,
    pub pose: usize,
    pub eps: Vec<T>,
}

/// The draws of particle `i` at `iter`; identical across methods.
pub fn draws<T: Scalar>(
    cfg: &DistillConfig<T>,
    world: &World<T>,
    num_particles: usize,
    i: usize,
    iter: usize,
    t_range: (usize, usize),
) -> Vec<Draw<T>> {
    let mut r = rng::substream(cfg.seed, (iter as u64) * (num_particles as u64) + i as u64);
    let poses = world.renderer.num_poses();
    let uniform;
    let weights = match &cfg.pose_weights {
        Some(w) => w.as_slice(),
        None => {
            uniform = vec![T::one(); poses];
            uniform.as_slice()
        }
    };
    (0..cfg.batch)
        .map(|_| {
            let t = r.random_range(t_range.0..=t_range.1);
            let pose = rng::categorical(&mut r, weights);
            let eps = rng::standard_normal_vec(&mut r, world.prior.dim());
            Draw { t, pose, eps }
        })
        .collect()
}

/// Gradients of one iteration plus the posterior observations for the EMA.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub gradients: Vec<Vec<T>>,
    /// Step of the first draw of each particle.
    pub steps: Vec<usize>,
    pub observations: Vec<(usize, Vec<T>)>,
}

/// Precomputed state shared by the per-particle gradient evaluations.
pub struct Engine<'a, T: Scalar> {
    world: &'a World<T>,
    cfg: &'a DistillConfig<T>,
    posterior: Box<dyn PosteriorModel<T>>,
    loss_weight: LossWeight<T>,
}

struct ParticleGrad<T> {
    grad: Vec<T>,
    t: usize,
    observations: Vec<(usize, Vec<T>)>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    pub fn new(world: &'a World<T>, cfg: &'a DistillConfig<T>) -> Result<Self> {
        cfg.validate(world)?;
        Ok(Self {
            world,
            cfg,
            posterior: posterior_model(world, cfg)?,
            loss_weight: LossWeight::new(cfg.weight, &world.schedule),
        })
    }

    pub fn posterior(&self) -> &dyn PosteriorModel<T> {
        self.posterior.as_ref()
    }

    pub fn tracker(&self) -> Result<MarginalTracker<T>> {
        MarginalTracker::with_posterior(self.world, self.cfg, self.posterior.as_ref())
    }

    /// Step range used at `iter`.
    pub fn t_range(&self, iter: usize) -> Result<(usize, usize)> {
        match self.cfg.bnf_n_i {
            Some(n_i) => bnf_interval(
                iter,
                self.cfg.iters.max(iter + 1),
                n_i,
                self.world.num_steps(),
            ),
            None => Ok(self.cfg.t_range),
        }
    }

    /// Per-particle gradients at `iter` under the configured method.
    pub fn gradients(
        &self,
        ps: &ParticleSet<T>,
        iter: usize,
        tracker: Option<&MarginalTracker<T>>,
    ) -> Result<StepOutput<T>> {
        if self.cfg.method == Method::Usd && tracker.is_none() {
            return Err(Error::Config("usd requires a marginal tracker".into()));
        }
        if ps.dim() != self.world.renderer.dim() {
            return Err(Error::Config(
                "particle dimension does not match renderer".into(),
            ));
        }
        let range = self.t_range(iter)?;
        let per: Vec<ParticleGrad<T>> = (0..ps.len())
            .into_par_iter()
            .map(|i| self.particle_gradient(ps, i, iter, range, tracker))
            .collect::<Result<_>>()?;
        let mut out = StepOutput {
            gradients: Vec::with_capacity(per.len()),
            steps: Vec::with_capacity(per.len()),
            observations: Vec::new(),
        };
        for p in per {
            out.gradients.push(p.grad);
            out.steps.push(p.t);
            out.observations.extend(p.observations);
        }
        Ok(out)
    }

    fn particle_gradient(
        &self,
        ps: &ParticleSet<T>,
        i: usize,
        iter: usize,
        range: (usize, usize),
        tracker: Option<&MarginalTracker<T>>,
    ) -> Result<ParticleGrad<T>> {
        let draws = draws(self.cfg, self.world, ps.len(), i, iter, range);
        let mut grad = vec![T::zero(); ps.dim()];
        let mut observations = Vec::new();
        let inv_b = T::one() / T::from_usize_lossy(draws.len());
        for d in &draws {
            let (g, obs) = self
                .draw_gradient(ps, i, d, tracker)
                .map_err(|e| Error::Step {
                    iter,
                    t: d.t,
                    source: Box::new(e),
                })?;
            linalg::axpy(&mut grad, inv_b, &g);
            observations.extend(obs.map(|p| (d.t, p)));
        }
        Ok(ParticleGrad {
            grad,
            t: draws[0].t,
            observations,
        })
    }

    fn draw_gradient(
        &self,
        ps: &ParticleSet<T>,
        i: usize,
        d: &Draw<T>,
        tracker: Option<&MarginalTracker<T>>,
    ) -> Result<(Vec<T>, Option<Vec<T>>)> {
        let w = self.world;
        let sched = &w.schedule;
        let theta = ps.get(i);
        let x0 = w.renderer.render(theta, d.pose)?;
        let jac = w.renderer.jacobian(theta, d.pose)?;
        let xt = sched.perturb(&x0, d.t, &d.eps)?;
        let eps_pre = w.prior.eps_pretrain(sched, d.t, &xt)?;
        let omega = self.loss_weight.at(d.t);
        let target = match self.cfg.method {
            Method::Sds => d.eps.clone(),
            _ => variational_eps(self.cfg.variational, ps, w, d.t, d.pose, i, &xt)?,
        };
        let residual = linalg::sub(&eps_pre, &target);
        let primary = linalg::scale(&jac.tr_mul_vec(&residual), omega);
        let weights = match (self.cfg.method, tracker) {
            (Method::Usd, Some(tr)) => Some(self.cfg.rectifier.weights(tr.lookup(d.t))),
            (Method::Ctrl, _) => {
                let k = self.posterior.num_categories();
                let c = self.cfg.control_category.expect("validated");
                Some(
                    (0..k)
                        .map(|j| if j == c { T::one() } else { T::zero() })
                        .collect(),
                )
            }
            _ => None,
        };
        let Some(weights) = weights else {
            return Ok((primary, None));
        };
        let grad_x = if weights.iter().all(|&v| v == weights[0]) {
            vec![T::zero(); xt.len()]
        } else {
            self.posterior
                .grad_log_r(sched, d.t, &xt, &weights, self.cfg.rectifier.fd_step)?
        };
        let mut secondary = linalg::scale(&jac.tr_mul_vec(&grad_x), -omega * sched.sigma(d.t));
        if self.cfg.grad_norm_align {
            secondary = grad_norm_align(&primary, &secondary);
        }
        let total = linalg::add(&primary, &secondary);
        let observation = match (self.cfg.method, tracker) {
            (Method::Usd, Some(tr)) if tr.source() == MarginalSource::Ema => {
                Some(self.posterior.posterior(sched, d.t, &xt)?)
            }
            _ => None,
        };
        Ok((total, observation))
    }
}

fn require(cfg_method: Method, expected: Method) -> Result<()> {
    if cfg_method != expected {
        return Err(Error::Config(format!(
            "{} step called with method {}",
            expected.name(),
            cfg_method.name()
        )));
    }
    Ok(())
}

pub fn sds_step<T: Scalar>(
    ps: &ParticleSet<T>,
    world: &World<T>,
    cfg: &DistillConfig<T>,
    iter: usize,
) -> Result<Vec<Vec<T>>> {
    require(cfg.method, Method::Sds)?;
    Ok(Engine::new(world, cfg)?
        .gradients(ps, iter, None)?
        .gradients)
}

pub fn vsd_step<T: Scalar>(
    ps: &ParticleSet<T>,
    world: &World<T>,
    cfg: &DistillConfig<T>,
    iter: usize,
) -> Result<Vec<Vec<T>>> {
    require(cfg.method, Method::Vsd)?;
    Ok(Engine::new(world, cfg)?
        .gradients(ps, iter, None)?
        .gradients)
}

/// USD gradients at the tracker's current state; the tracker then absorbs
/// this iteration's posterior observations.
pub fn usd_step<T: Scalar>(
    ps: &ParticleSet<T>,
    world: &World<T>,
    tracker: &mut MarginalTracker<T>,
    cfg: &DistillConfig<T>,
    iter: usize,
) -> Result<Vec<Vec<T>>> {
    require(cfg.method, Method::Usd)?;
    let out = Engine::new(world, cfg)?.gradients(ps, iter, Some(tracker))?;
    tracker.observe(&out.observations)?;
    Ok(out.gradients)
}

pub fn ctrl_step<T: Scalar>(
    ps: &ParticleSet<T>,
    world: &World<T>,
    cfg: &DistillConfig<T>,
    iter: usize,
) -> Result<Vec<Vec<T>>> {
    require(cfg.method, Method::Ctrl)?;
    Ok(Engine::new(world, cfg)?
        .gradients(ps, iter, None)?
        .gradients)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterMetrics<T> {
    /// Completed iterations.
    pub iter: usize,
    pub t_low: usize,
    pub t_high: usize,
    /// Fraction of rendered views whose most likely clean category is each
    /// category.
    pub split: Vec<T>,
    /// Entropy of the view-averaged clean posterior, in nats.
    pub entropy: T,
    pub mean_grad_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub iter: usize,
    pub particles: Vec<Vec<T>>,
    pub marginal: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport<T> {
    pub method: Method,
    pub metrics: Vec<IterMetrics<T>>,
    pub snapshots: Vec<Snapshot<T>>,
    pub final_particles: Vec<Vec<T>>,
}

impl<T: Scalar> RunReport<T> {
    pub fn final_metrics(&self) -> &IterMetrics<T> {
        self.metrics
            .last()
            .expect("a run records at least its initial state")
    }
}

/// Category split and posterior entropy of the particles' clean renders.
pub fn evaluate<T: Scalar>(world: &World<T>, particles: &[Vec<T>]) -> Result<(Vec<T>, T)> {
    let k = world.prior.num_categories();
    let mut rows = Vec::new();
    let mut counts = vec![T::zero(); k];
    for theta in particles {
        for pose in 0..world.renderer.num_poses() {
            let x0 = world.renderer.render(theta, pose)?;
            let p = world.prior.category_posterior(&world.schedule, 0, &x0)?;
            let best = (0..k).fold(0, |b, j| if p[j] > p[b] { j } else { b });
            counts[best] = counts[best] + T::one();
            rows.push(p);
        }
    }
    let n = T::from_usize_lossy(rows.len());
    let report = metrics::categorical_entropy(&rows)?;
    Ok((counts.into_iter().map(|c| c / n).collect(), report.entropy))
}

/// Runs the configured method for `cfg.iters` iterations.
pub fn run<T: Scalar>(
    ps: &ParticleSet<T>,
    world: &World<T>,
    cfg: &DistillConfig<T>,
) -> Result<RunReport<T>> {
    let engine = Engine::new(world, cfg)?;
    if ps.dim() != world.renderer.dim() {
        return Err(Error::Config(
            "particle dimension does not match renderer".into(),
        ));
    }
    let mut tracker = engine.tracker()?;
    let mut particles = ps.clone();
    let initial_range = engine.t_range(0)?;
    let (split, entropy) = evaluate(world, particles.particles())?;
    let mut metrics = vec![IterMetrics {
        iter: 0,
        t_low: initial_range.0,
        t_high: initial_range.1,
        split,
        entropy,
        mean_grad_norm: T::zero(),
    }];
    let mut snapshots = vec![Snapshot {
        iter: 0,
        particles: particles.particles().to_vec(),
        marginal: tracker.values().to_vec(),
    }];
    let limit = T::lit(DIVERGENCE_LIMIT);
    for iter in 0..cfg.iters {
        let range = engine.t_range(iter)?;
        let uses_tracker = cfg.method == Method::Usd;
        let out = engine.gradients(&particles, iter, uses_tracker.then_some(&tracker))?;
        if uses_tracker {
            tracker
                .observe(&out.observations)
                .map_err(|e| Error::Step {
                    iter,
                    t: out.steps[0],
                    source: Box::new(e),
                })?;
        }
        let mut norm_sum = T::zero();
        for (i, g) in out.gradients.iter().enumerate() {
            norm_sum = norm_sum + linalg::norm(g);
            linalg::axpy(&mut particles.particles[i], -cfg.eta1, g);
            let norm = linalg::norm(&particles.particles[i]);
            if particles.particles[i].iter().any(|v| !(v.abs() <= limit)) {
                return Err(Error::Divergence {
                    method: cfg.method.name().into(),
                    iter,
                    t: out.steps[i],
                    norm: norm.as_f64(),
                });
            }
        }
        let done = iter + 1;
        let (split, entropy) = evaluate(world, particles.particles())?;
        metrics.push(IterMetrics {
            iter: done,
            t_low: range.0,
            t_high: range.1,
            split,
            entropy,
            mean_grad_norm: norm_sum / T::from_usize_lossy(particles.len()),
        });
        let periodic = cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0;
        if periodic || done == cfg.iters {
            snapshots.push(Snapshot {
                iter: done,
                particles: particles.particles().to_vec(),
                marginal: tracker.values().to_vec(),
            });
        }
    }
    Ok(RunReport {
        method: cfg.method,
        metrics,
        snapshots,
        final_particles: particles.particles,
    })
}

/// Tracker values per iteration while the particles stay fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryTrace<T> {
    /// `values[iter][interval][category]` after `iter + 1` updates.
    pub values: Vec<Vec<Vec<T>>>,
    /// Per-interval Monte Carlo marginal of the particle-induced
    /// distribution.
    pub reference: Vec<Vec<T>>,
}

impl<T: Scalar> StationaryTrace<T> {
    /// Mean over intervals of the TV distance to the reference, per
    /// iteration.
    pub fn tv_series(&self) -> Result<Vec<T>> {
        self.values
            .iter()
            .map(|snap| {
                let mut acc = T::zero();
                for (v, r) in snap.iter().zip(&self.reference) {
                    acc = acc + metrics::marginal_tv(v, r)?;
                }
                Ok(acc / T::from_usize_lossy(snap.len()))
            })
            .collect()
    }
}

/// Runs the EMA marginal tracker for `iters` iterations on particles that
/// are not updated, and computes the exact per-interval marginal of the
/// particle-induced noisy distribution from `reference_samples` draws per
/// interval.
pub fn stationary_ema_trace<T: Scalar>(
    ps: &ParticleSet<T>,
    world: &World<T>,
    cfg: &DistillConfig<T>,
    iters: usize,
    reference_samples: usize,
) -> Result<StationaryTrace<T>> {
    cfg.validate(world)?;
    if reference_samples == 0 {
        return Err(Error::Argument("reference_samples must be >= 1".into()));
    }
    let posterior = posterior_model(world, cfg)?;
    let steps = world.num_steps();
    let k = world.prior.num_categories();
    let alpha = T::lit(alpha_from_n_ema(cfg.n_ema)?);
    let mut tracker = MarginalTracker {
        source: MarginalSource::Ema,
        intervals: IntervalEma::new(steps, cfg.ema_intervals, k, alpha)?,
    };
    let noisy_posterior = |theta: &[T], d: &Draw<T>| -> Result<Vec<T>> {
        let x0 = world.renderer.render(theta, d.pose)?;
        let xt = world.schedule.perturb(&x0, d.t, &d.eps)?;
        posterior.posterior(&world.schedule, d.t, &xt)
    };
    let mut values = Vec::with_capacity(iters);
    for iter in 0..iters {
        let observations: Vec<(usize, Vec<T>)> = (0..ps.len())
            .into_par_iter()
            .map(|i| {
                draws(cfg, world, ps.len(), i, iter, cfg.t_range)
                    .into_iter()
                    .map(|d| Ok((d.t, noisy_posterior(ps.get(i), &d)?)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        tracker.observe(&observations)?;
        values.push(tracker.values().to_vec());
    }
    let n_t = cfg.ema_intervals;
    let ns = tracker.intervals.steps_per_interval();
    let (lo_all, hi_all) = cfg.t_range;
    let reference = (0..n_t)
        .into_par_iter()
        .map(|j| {
            let lo = (j * ns).max(lo_all);
            let hi = if j + 1 == n_t {
                steps
            } else {
                (j + 1) * ns - 1
            }
            .min(hi_all);
            if lo > hi {
                return Ok(vec![T::one() / T::from_usize_lossy(k); k]);
            }
            let mut r = rng::substream(cfg.seed ^ 0x5eed, j as u64);
            let weights = cfg
                .pose_weights
                .clone()
                .unwrap_or_else(|| vec![T::one(); world.renderer.num_poses()]);
            let mut acc = vec![T::zero(); k];
            for s in 0..reference_samples {
                let d = Draw {
                    t: r.random_range(lo..=hi),
                    pose: rng::categorical(&mut r, &weights),
                    eps: rng::standard_normal_vec(&mut r, world.prior.dim()),
                };
                let p = noisy_posterior(ps.get(s % ps.len()), &d)?;
                linalg::axpy(&mut acc, T::one(), &p);
            }
            Ok(linalg::scale(
                &acc,
                T::one() / T::from_usize_lossy(reference_samples),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StationaryTrace { values, reference })
}
