use rayon::prelude::*;

use super::features::{extract_features, FeatureMap, FEATURE_DIM};
use super::glyph::{GlyphImage, PoseCategory};
use super::segment::{coordinate_map, ForegroundSegmenter, Mask, SegmentationHint};
use crate::error::{Error, Result};
use crate::linalg;

/// Segmented, coordinate-annotated features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub features: FeatureMap,
    pub mask: Mask,
    pub coord: Vec<Option<f64>>,
}

impl Analysis {
    /// Foreground `(descriptor, coordinate)` pairs.
    fn foreground(&self) -> Vec<([f64; FEATURE_DIM], f64)> {
        self.features
            .patches
            .iter()
            .zip(&self.coord)
            .filter_map(|(p, c)| c.map(|c| (*p, c)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub category: usize,
    pub analysis: Analysis,
}

/// How patch feature distances weight coordinate disagreements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrientationRule {
    /// `1 − softmax_{u'}(d/τ)`, averaged over all pairs.
    #[default]
    Literal,
    /// `softmax_{u'}(−d/τ)`: each input patch compares its coordinate with
    /// its feature-nearest template patches.
    Matching,
}

/// Which similarity families enter the fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassifierMode {
    #[default]
    Full,
    OrientOnly,
    TextureOnly,
}

/// Cosine similarity of global descriptors.
pub fn texture_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (linalg::norm(a), linalg::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Argument(
            "texture similarity of a zero vector".into(),
        ));
    }
    Ok((linalg::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Patch-matching orientation score `1 − mean_{u,u'} s_{u,u'} |m_u − m'_{u'}|`.
pub fn orientation_similarity(
    input: &Analysis,
    template: &Analysis,
    tau_pat: f64,
    rule: OrientationRule,
) -> Result<f64> {
    let a = input.foreground();
    let b = template.foreground();
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument(
            "orientation similarity needs nonempty foregrounds".into(),
        ));
    }
    let mut total = 0.0;
    let mut dist = vec![0.0; b.len()];
    for (fu, mu) in &a {
        for (d, (fv, _)) in dist.iter_mut().zip(&b) {
            *d = fu
                .iter()
                .zip(fv)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
        }
        let row: f64 = match rule {
            OrientationRule::Literal => {
                let sm = linalg::softmax(&dist, tau_pat);
                sm.iter()
                    .zip(&b)
                    .map(|(s, (_, mv))| (1.0 - s) * (mu - mv).abs())
                    .sum::<f64>()
                    / b.len() as f64
            }
            OrientationRule::Matching => {
                let neg: Vec<f64> = dist.iter().map(|d| -d).collect();
                let sm = linalg::softmax(&neg, tau_pat);
                sm.iter()
                    .zip(&b)
                    .map(|(s, (_, mv))| s * (mu - mv).abs())
                    .sum()
            }
        };
        total += row;
    }
    Ok(1.0 - total / a.len() as f64)
}

/// Rescaling of a similarity vector over the template axis before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the largest score, so the best template scores 1 and the
    /// others keep their relative standing.
    #[default]
    Max,
    /// Map the smallest score to 0 and the largest to 1.
    MinMax,
}

/// Normalizes nonnegative scores; a vector without spread (or without a
/// positive maximum) maps to all ones.
pub fn normalize(scores: &[f64], how: Normalization) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match how {
        Normalization::Max if hi > 0.0 => scores.iter().map(|s| s / hi).collect(),
        Normalization::MinMax if hi > lo => scores.iter().map(|s| (s - lo) / (hi - lo)).collect(),
        _ => vec![1.0; scores.len()],
    }
}

/// Training-free template-matching pose classifier.
#[derive(Debug, Clone)]
pub struct PoseClassifier {
    templates: Vec<Template>,
    segmenter: ForegroundSegmenter,
    pub hint: SegmentationHint,
    pub tau_pat: f64,
    pub tau_pose: f64,
    pub rule: OrientationRule,
    pub mode: ClassifierMode,
    pub normalization: Normalization,
}

impl PoseClassifier {
    pub const TAU_PAT: f64 = 0.01;
    pub const TAU_POSE: f64 = 0.05;
    pub const AUGMENTATIONS: usize = 8;

    /// One template image per category, in category order.
    pub fn new(template_images: &[GlyphImage], seed: u64) -> Result<Self> {
        if template_images.is_empty() {
            return Err(Error::Config(
                "classifier needs at least one template".into(),
            ));
        }
        let segmenter =
            ForegroundSegmenter::fit_augmented(template_images, Self::AUGMENTATIONS, seed)?;
        let mut pc = Self {
            templates: Vec::new(),
            segmenter,
            hint: SegmentationHint::default(),
            tau_pat: Self::TAU_PAT,
            tau_pose: Self::TAU_POSE,
            rule: OrientationRule::default(),
            mode: ClassifierMode::default(),
            normalization: Normalization::default(),
        };
        pc.templates = template_images
            .iter()
            .enumerate()
            .map(|(c, img)| {
                Ok(Template {
                    category: c,
                    analysis: pc.analyze(img)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(pc)
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn num_categories(&self) -> usize {
        self.templates.len()
    }

    /// Reorders templates (for equivariance checks).
    pub fn with_template_order(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.templates = order.iter().map(|&i| self.templates[i].clone()).collect();
        out
    }

    pub fn analyze(&self, img: &GlyphImage) -> Result<Analysis> {
        let features = extract_features(img)?;
        let mask = self.segmenter.segment(&features, &self.hint)?;
        let coord = coordinate_map(&mask)?;
        Ok(Analysis {
            features,
            mask,
            coord,
        })
    }

    /// Raw `(texture, orientation)` similarities against every template;
    /// both are clamped to `[0, 1]`.
    pub fn similarities(&self, img: &GlyphImage) -> Result<(Vec<f64>, Vec<f64>)> {
        let a = self.analyze(img)?;
        let mut tex = Vec::with_capacity(self.templates.len());
        let mut ori = Vec::with_capacity(self.templates.len());
        for t in &self.templates {
            tex.push(if linalg::norm(&a.features.cls) == 0.0 {
                0.0
            } else {
                texture_similarity(&a.features.cls, &t.analysis.features.cls)?.max(0.0)
            });
            ori.push(
                orientation_similarity(&a, &t.analysis, self.tau_pat, self.rule)?.clamp(0.0, 1.0),
            );
        }
        Ok((tex, ori))
    }

    /// `softmax_{τ_pose}(normalize(s_tex) ⊙ normalize(s_ori))`.
    pub fn classify(&self, img: &GlyphImage) -> Result<Vec<f64>> {
        let (tex, ori) = self.similarities(img)?;
        let nt = normalize(&tex, self.normalization);
        let no = normalize(&ori, self.normalization);
        let fused: Vec<f64> = match self.mode {
            ClassifierMode::Full => nt.iter().zip(&no).map(|(a, b)| a * b).collect(),
            ClassifierMode::OrientOnly => no,
            ClassifierMode::TextureOnly => nt,
        };
        Ok(linalg::softmax(&fused, self.tau_pose))
    }

    pub fn classify_batch(&self, images: &[GlyphImage]) -> Result<Vec<Vec<f64>>> {
        images.par_iter().map(|img| self.classify(img)).collect()
    }
}

/// Classifier over the canonical template glyphs (seed 0 of every category).
pub fn default_templates() -> Vec<GlyphImage> {
    PoseCategory::ALL
        .iter()
        .map(|&c| super::glyph::generate_glyph(c, 0))
        .collect()
}
