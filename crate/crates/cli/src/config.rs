//! TOML experiment configuration. Every section is optional; unknown keys
//! are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use recdistill_core::classifier::{Normalization, OrientationRule, PoseClassifier};
use recdistill_core::distill::{self, ClassifierSettings, DistillConfig, Method, VariationalScore};
use recdistill_core::linalg::Matrix;
use recdistill_core::rectify::{self, MarginalSource, PosteriorSource, Rectifier, TargetMarginal};
use recdistill_core::schedule::{DiffusionSchedule, WeightKind};
use recdistill_core::worldmodel::{Component, Covariance, PoseLabeledMixture, Renderer};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub schedule: ScheduleSection,
    pub mixture: Option<MixtureSection>,
    #[serde(default)]
    pub renderer: RendererSection,
    #[serde(default)]
    pub rectifier: RectifierSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub demo: DemoSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub num_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            num_steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub num_categories: usize,
    pub components: Vec<ComponentSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub category: usize,
    pub variance: Option<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum RendererKind {
    #[default]
    Identity,
    Rotation,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RendererSection {
    pub kind: RendererKind,
    pub poses: usize,
    pub angles: Vec<f64>,
}

impl Default for RendererSection {
    fn default() -> Self {
        Self {
            kind: RendererKind::Identity,
            poses: 1,
            angles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorChoice {
    #[default]
    Exact,
    Tweedie,
    Direct,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalChoice {
    #[default]
    Ema,
    ExactMc,
    FixedPresampled,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RectifierSection {
    pub target: Option<Vec<f64>>,
    pub posterior_source: PosteriorChoice,
    pub marginal_source: MarginalChoice,
    pub epsilon_floor: f64,
    pub fd_step: f64,
    pub ema_intervals: usize,
    pub n_ema: u64,
    pub marginal_samples: usize,
    pub presample_batch: usize,
}

impl Default for RectifierSection {
    fn default() -> Self {
        Self {
            target: None,
            posterior_source: PosteriorChoice::Exact,
            marginal_source: MarginalChoice::Ema,
            epsilon_floor: Rectifier::<f64>::DEFAULT_FLOOR,
            fd_step: Rectifier::<f64>::DEFAULT_FD_STEP,
            ema_intervals: 10,
            n_ema: 100,
            marginal_samples: 4096,
            presample_batch: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    Sds,
    #[default]
    Vsd,
    Usd,
    Ctrl,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum WeightChoice {
    #[default]
    SigmaSquared,
    ConstantOne,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum VariationalChoice {
    #[default]
    ParticleMixture,
    SingleParticle,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub method: MethodChoice,
    pub particles: usize,
    pub init_center: Option<Vec<f64>>,
    pub init_spread: f64,
    pub iters: usize,
    pub eta1: f64,
    pub eta2: Option<f64>,
    pub batch: usize,
    pub t_min: Option<usize>,
    pub t_max: Option<usize>,
    pub bnf_n_i: Option<usize>,
    pub grad_norm_align: bool,
    pub control_category: Option<usize>,
    pub pose_weights: Option<Vec<f64>>,
    pub weight: WeightChoice,
    pub variational: VariationalChoice,
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            method: MethodChoice::Vsd,
            particles: 16,
            init_center: None,
            init_spread: 0.5,
            iters: 4000,
            eta1: 0.1,
            eta2: None,
            batch: 1,
            t_min: None,
            t_max: None,
            bnf_n_i: None,
            grad_norm_align: false,
            control_category: None,
            pose_weights: None,
            weight: WeightChoice::SigmaSquared,
            variational: VariationalChoice::ParticleMixture,
            snapshot_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum RuleChoice {
    #[default]
    Literal,
    Matching,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationChoice {
    #[default]
    Max,
    MinMax,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    /// Kernel width of the mixture-space classifier.
    pub length_scale: f64,
    /// Softmax temperature of the mixture-space classifier.
    pub temperature: f64,
    pub tau_pat: f64,
    pub tau_pose: f64,
    pub orientation_rule: RuleChoice,
    pub normalization: NormalizationChoice,
    pub segmenter_seed: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            length_scale: 1.0,
            temperature: 0.1,
            tau_pat: PoseClassifier::TAU_PAT,
            tau_pose: PoseClassifier::TAU_POSE,
            orientation_rule: RuleChoice::Literal,
            normalization: NormalizationChoice::Max,
            segmenter_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSection {
    pub grid_min: f64,
    pub grid_max: f64,
    pub points: usize,
    pub times: Vec<usize>,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            grid_min: -8.0,
            grid_max: 8.0,
            points: 801,
            times: vec![50, 300, 700],
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule<f64>> {
        let s = &self.schedule;
        Ok(DiffusionSchedule::new(s.num_steps, s.beta_min, s.beta_max)?)
    }

    pub fn mixture(&self) -> Result<PoseLabeledMixture<f64>> {
        let Some(m) = &self.mixture else {
            bail!("config has no [mixture] section");
        };
        let comps = m
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let cov = match (&c.variance, &c.covariance) {
                    (Some(v), None) => Covariance::Isotropic(*v),
                    (None, Some(rows)) => Covariance::Full(Matrix::from_rows(rows)?),
                    _ => bail!("mixture component {i} needs exactly one of variance or covariance"),
                };
                Ok(Component {
                    weight: c.weight,
                    mean: c.mean.clone(),
                    cov,
                    category: c.category,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PoseLabeledMixture::new(m.num_categories, comps)?)
    }

    pub fn renderer(&self, dim: usize) -> Result<Renderer<f64>> {
        let r = &self.renderer;
        Ok(match r.kind {
            RendererKind::Identity => {
                if r.poses == 0 {
                    bail!("renderer.poses must be >= 1");
                }
                Renderer::Identity {
                    dim,
                    num_poses: r.poses,
                }
            }
            RendererKind::Rotation => {
                if r.angles.is_empty() {
                    bail!("rotation renderer needs at least one angle");
                }
                Renderer::Rotation {
                    angles: r.angles.clone(),
                }
            }
        })
    }

    pub fn world(&self) -> Result<distill::World<f64>> {
        let prior = self.mixture()?;
        let renderer = self.renderer(prior.dim())?;
        Ok(distill::World::new(prior, renderer, self.schedule()?)?)
    }

    pub fn target(&self, k: usize) -> Result<TargetMarginal<f64>> {
        Ok(match &self.rectifier.target {
            Some(p) => {
                if p.len() != k {
                    bail!(
                        "rectifier.target has {} entries, mixture has {k} categories",
                        p.len()
                    );
                }
                TargetMarginal::new(p.clone())?
            }
            None => TargetMarginal::uniform(k),
        })
    }

    pub fn rectifier(&self, k: usize) -> Result<Rectifier<f64>> {
        let r = &self.rectifier;
        let posterior = match r.posterior_source {
            PosteriorChoice::Exact => PosteriorSource::ExactMixture,
            PosteriorChoice::Tweedie => PosteriorSource::ClassifierTweedie,
            PosteriorChoice::Direct => PosteriorSource::ClassifierDirect,
        };
        let marginal = match r.marginal_source {
            MarginalChoice::Ema => MarginalSource::Ema,
            MarginalChoice::ExactMc => MarginalSource::ExactMc,
            MarginalChoice::FixedPresampled => MarginalSource::FixedPresampled,
        };
        Ok(rectify::Rectifier::new(
            self.target(k)?,
            posterior,
            marginal,
            r.epsilon_floor,
            r.fd_step,
        )?)
    }

    pub fn distill_config(&self, world: &distill::World<f64>) -> Result<DistillConfig<f64>> {
        let d = &self.distill;
        let k = world.prior.num_categories();
        let steps = world.schedule.num_steps();
        let method = match d.method {
            MethodChoice::Sds => Method::Sds,
            MethodChoice::Vsd => Method::Vsd,
            MethodChoice::Usd => Method::Usd,
            MethodChoice::Ctrl => Method::Ctrl,
        };
        let mut c = DistillConfig::new(method, d.iters, d.eta1, k, steps);
        c.eta2 = d.eta2.unwrap_or(d.eta1);
        c.batch = d.batch;
        c.t_range = (
            d.t_min.unwrap_or(c.t_range.0),
            d.t_max.unwrap_or(c.t_range.1),
        );
        c.bnf_n_i = d.bnf_n_i;
        c.grad_norm_align = d.grad_norm_align;
        c.control_category = d.control_category;
        c.rectifier = self.rectifier(k)?;
        c.pose_weights = d.pose_weights.clone();
        c.weight = match d.weight {
            WeightChoice::SigmaSquared => WeightKind::SigmaSquared,
            WeightChoice::ConstantOne => WeightKind::ConstantOne,
        };
        c.variational = match d.variational {
            VariationalChoice::ParticleMixture => VariationalScore::AnalyticParticleMixture,
            VariationalChoice::SingleParticle => VariationalScore::SingleParticleExact,
        };
        c.ema_intervals = self.rectifier.ema_intervals;
        c.n_ema = self.rectifier.n_ema;
        c.marginal_samples = self.rectifier.marginal_samples;
        c.presample_batch = self.rectifier.presample_batch;
        c.classifier = ClassifierSettings {
            length_scale: self.classifier.length_scale,
            temperature: self.classifier.temperature,
        };
        c.snapshot_every = d.snapshot_every;
        c.seed = d.seed;
        c.validate(world)?;
        Ok(c)
    }

    pub fn apply_pose_classifier(&self, pc: &mut PoseClassifier) {
        let c = &self.classifier;
        pc.tau_pat = c.tau_pat;
        pc.tau_pose = c.tau_pose;
        pc.rule = match c.orientation_rule {
            RuleChoice::Literal => OrientationRule::Literal,
            RuleChoice::Matching => OrientationRule::Matching,
        };
        pc.normalization = match c.normalization {
            NormalizationChoice::Max => Normalization::Max,
            NormalizationChoice::MinMax => Normalization::MinMax,
        };
    }
}
