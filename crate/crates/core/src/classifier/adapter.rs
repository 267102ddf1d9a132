//! Classifier-backed posterior sources: classify the Tweedie estimate of a
//! noisy sample, or the noisy sample itself.

use super::glyph::{GlyphImage, GLYPH_SIZE};
use super::pose::PoseClassifier;
use crate::error::{Error, Result};
use crate::estimator::tweedie_x0;
use crate::linalg;
use crate::rectify::PosteriorModel;
use crate::scalar::Scalar;
use crate::schedule::DiffusionSchedule;
use crate::worldmodel::{Component, Covariance, PoseLabeledMixture};

/// Template classifier for mixture-space points: similarity to each
/// category anchor is a Gaussian kernel `exp(−‖x − a_c‖² / 2ℓ²)`, turned
/// into probabilities by a tempered softmax. Points far from every anchor
/// get near-uniform output, as a clean-image classifier does on noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PointClassifier<T> {
    anchors: Vec<Vec<T>>,
    length_scale: T,
    temperature: T,
}

impl<T: Scalar> PointClassifier<T> {
    pub fn new(anchors: Vec<Vec<T>>, length_scale: T, temperature: T) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Config("point classifier needs anchors".into()));
        }
        if !(length_scale > T::zero() && temperature > T::zero()) {
            return Err(Error::Config(
                "length scale and temperature must be positive".into(),
            ));
        }
        Ok(Self {
            anchors,
            length_scale,
            temperature,
        })
    }

    /// Anchors at the weight-averaged component means of every category.
    pub fn from_mixture(
        m: &PoseLabeledMixture<T>,
        length_scale: T,
        temperature: T,
    ) -> Result<Self> {
        let mut anchors = vec![vec![T::zero(); m.dim()]; m.num_categories()];
        let w = m.category_weights();
        for c in m.components() {
            linalg::axpy(&mut anchors[c.category], c.weight / w[c.category], &c.mean);
        }
        Self::new(anchors, length_scale, temperature)
    }

    pub fn anchors(&self) -> &[Vec<T>] {
        &self.anchors
    }

    pub fn classify(&self, x: &[T]) -> Vec<T> {
        let two_l2 = T::lit(2.0) * self.length_scale * self.length_scale;
        let sims: Vec<T> = self
            .anchors
            .iter()
            .map(|a| (-linalg::squared_distance(x, a) / two_l2).exp())
            .collect();
        linalg::softmax(&sims, self.temperature)
    }
}

/// `p(c̄|x_t) ≈ classify(x̂_0)` with `x̂_0` from the prior's noise prediction.
#[derive(Debug, Clone)]
pub struct TweediePosterior<T> {
    pub prior: PoseLabeledMixture<T>,
    pub classifier: PointClassifier<T>,
}

impl<T: Scalar> PosteriorModel<T> for TweediePosterior<T> {
    fn num_categories(&self) -> usize {
        self.classifier.anchors.len()
    }

    fn posterior(&self, schedule: &DiffusionSchedule<T>, t: usize, xt: &[T]) -> Result<Vec<T>> {
        if t == 0 {
            return Ok(self.classifier.classify(xt));
        }
        let eps = self.prior.eps_pretrain(schedule, t, xt)?;
        let x0 = tweedie_x0(schedule, t, xt, &eps)?;
        Ok(self.classifier.classify(&x0))
    }
}

/// `p(c̄|x_t) ≈ classify(x_t)`, skipping denoising.
#[derive(Debug, Clone)]
pub struct DirectPosterior<T> {
    pub classifier: PointClassifier<T>,
}

impl<T: Scalar> PosteriorModel<T> for DirectPosterior<T> {
    fn num_categories(&self) -> usize {
        self.classifier.anchors.len()
    }

    fn posterior(&self, _schedule: &DiffusionSchedule<T>, _t: usize, xt: &[T]) -> Result<Vec<T>> {
        Ok(self.classifier.classify(xt))
    }
}

/// Pixel-space prior: an equal-weight isotropic mixture centered on the
/// given labeled glyphs.
pub fn glyph_prior(images: &[GlyphImage], variance: f64) -> Result<PoseLabeledMixture<f64>> {
    let w = 1.0 / images.len() as f64;
    let comps = images
        .iter()
        .map(|img| {
            let cat = img
                .true_category
                .ok_or_else(|| Error::Config("glyph prior images need labels".into()))?;
            Ok(Component {
                weight: w,
                mean: img.pixels.clone(),
                cov: Covariance::Isotropic(variance),
                category: cat.index(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = comps.iter().map(|c| c.category + 1).max().unwrap_or(0);
    PoseLabeledMixture::new(k, comps)
}

fn as_image(x: &[f64]) -> Result<GlyphImage> {
    GlyphImage::new(GLYPH_SIZE, x.to_vec(), None)
}

/// Classifies the Tweedie estimate of a noisy glyph under `denoiser`.
pub fn classifier_posterior_adapter(
    pc: &PoseClassifier,
    schedule: &DiffusionSchedule<f64>,
    denoiser: &PoseLabeledMixture<f64>,
    t: usize,
    xt: &[f64],
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::Argument("adapter requires t >= 1".into()));
    }
    let eps = denoiser.eps_pretrain(schedule, t, xt)?;
    let x0 = tweedie_x0(schedule, t, xt, &eps)?;
    pc.classify(&as_image(&x0)?)
}

/// Classifies a noisy glyph as if it were clean.
pub fn classify_direct(pc: &PoseClassifier, xt: &[f64]) -> Result<Vec<f64>> {
    pc.classify(&as_image(xt)?)
}
