use rand::Rng;

use super::features::{extract_features, FeatureMap, FEATURE_DIM, GRID};
use super::glyph::GlyphImage;
use crate::error::{Error, Result};
use crate::rng;

/// `GRID × GRID` foreground mask, row-major.
pub type Mask = Vec<bool>;

/// Resolves the sign ambiguity of the principal component.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SegmentationHint {
    /// Expected-foreground map peaked at the image center.
    #[default]
    CenterPrior,
    /// Expected foreground descriptor; patches resembling it are foreground.
    Descriptor([f64; FEATURE_DIM]),
}

fn center_prior() -> Vec<f64> {
    let c = (GRID as f64 - 1.0) / 2.0;
    let s2 = 2.0 * (GRID as f64 / 4.0).powi(2);
    (0..GRID * GRID)
        .map(|i| {
            let (r, col) = ((i / GRID) as f64, (i % GRID) as f64);
            (-((r - c).powi(2) + (col - c).powi(2)) / s2).exp()
        })
        .collect()
}

/// Principal axis of patch descriptors: PCA on the patch clouds of the
/// fitting set, applied to new maps by projection and Otsu thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundSegmenter {
    mean: [f64; FEATURE_DIM],
    axis: [f64; FEATURE_DIM],
}

fn covariance(
    points: &[[f64; FEATURE_DIM]],
) -> ([f64; FEATURE_DIM], [[f64; FEATURE_DIM]; FEATURE_DIM]) {
    let n = points.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    for p in points {
        for k in 0..FEATURE_DIM {
            mean[k] += p[k] / n;
        }
    }
    let mut cov = [[0.0; FEATURE_DIM]; FEATURE_DIM];
    for p in points {
        for i in 0..FEATURE_DIM {
            for j in 0..FEATURE_DIM {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

/// Leading eigenvector of a symmetric PSD matrix.
fn leading_axis(cov: &[[f64; FEATURE_DIM]; FEATURE_DIM]) -> Option<[f64; FEATURE_DIM]> {
    let m = nalgebra::SMatrix::<f64, FEATURE_DIM, FEATURE_DIM>::from_fn(|i, j| cov[i][j]);
    let eig = nalgebra::SymmetricEigen::new(m);
    let (idx, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let trace: f64 = (0..FEATURE_DIM).map(|i| cov[i][i]).sum();
    if !(val > 1e-12 * trace.max(1e-300)) || trace <= 1e-18 {
        return None;
    }
    let v = eig.eigenvectors.column(idx);
    Some(std::array::from_fn(|k| v[k]))
}

/// Otsu threshold: the split of the sorted values maximizing between-class
/// variance. Returns a value strictly between the two classes.
fn otsu(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let total: f64 = v.iter().sum();
    let mut best = (f64::NEG_INFINITY, v[n - 1]);
    let mut left = 0.0;
    for i in 1..n {
        left += v[i - 1];
        if v[i] == v[i - 1] {
            continue;
        }
        let (w0, w1) = (i as f64, (n - i) as f64);
        let m0 = left / w0;
        let m1 = (total - left) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best.0 {
            best = (between, 0.5 * (v[i - 1] + v[i]));
        }
    }
    best.1
}

impl ForegroundSegmenter {
    /// Fits the axis on the union of all patch descriptors.
    pub fn fit(maps: &[FeatureMap]) -> Result<Self> {
        let points: Vec<[f64; FEATURE_DIM]> = maps
            .iter()
            .flat_map(|m| m.patches.iter().copied())
            .collect();
        if points.is_empty() {
            return Err(Error::Segmentation("no feature maps to fit".into()));
        }
        let (mean, cov) = covariance(&points);
        let axis = leading_axis(&cov)
            .ok_or_else(|| Error::Segmentation("patch features have zero variance".into()))?;
        Ok(Self { mean, axis })
    }

    /// Fits on template images plus `augmentations` jittered copies of each
    /// (intensity noise and translations of up to two pixels).
    pub fn fit_augmented(images: &[GlyphImage], augmentations: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        let mut maps = Vec::with_capacity(images.len() * (augmentations + 1));
        for img in images {
            maps.push(extract_features(img)?);
            for _ in 0..augmentations {
                let dx: i64 = rng.random_range(-2..=2);
                let dy: i64 = rng.random_range(-2..=2);
                let n = img.size as i64;
                let mut pixels = vec![0.0; img.pixels.len()];
                for r in 0..n {
                    for c in 0..n {
                        let (sr, sc) = (r - dy, c - dx);
                        let base = if (0..n).contains(&sr) && (0..n).contains(&sc) {
                            img.pixels[(sr * n + sc) as usize]
                        } else {
                            0.0
                        };
                        pixels[(r * n + c) as usize] = base + rng.random_range(-0.05..=0.05);
                    }
                }
                maps.push(extract_features(&GlyphImage::new(img.size, pixels, None)?)?);
            }
        }
        Self::fit(&maps)
    }

    pub fn axis(&self) -> &[f64; FEATURE_DIM] {
        &self.axis
    }

    fn project(&self, fm: &FeatureMap) -> Vec<f64> {
        fm.patches
            .iter()
            .map(|p| {
                (0..FEATURE_DIM)
                    .map(|k| (p[k] - self.mean[k]) * self.axis[k])
                    .sum()
            })
            .collect()
    }

    /// Binary foreground mask. The projection sign is chosen so that the
    /// hint correlates positively with it; the threshold is Otsu's.
    pub fn segment(&self, fm: &FeatureMap, hint: &SegmentationHint) -> Result<Mask> {
        let mut proj = self.project(fm);
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi - lo > 1e-12) {
            return Err(Error::Segmentation(
                "projected patch features are constant".into(),
            ));
        }
        let mean = proj.iter().sum::<f64>() / proj.len() as f64;
        let agreement: f64 = match hint {
            SegmentationHint::CenterPrior => {
                let prior = center_prior();
                let pm = prior.iter().sum::<f64>() / prior.len() as f64;
                proj.iter()
                    .zip(&prior)
                    .map(|(p, h)| (p - mean) * (h - pm))
                    .sum()
            }
            SegmentationHint::Descriptor(d) => {
                let sim: Vec<f64> = fm
                    .patches
                    .iter()
                    .map(|p| -p.iter().zip(d).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    .collect();
                let sm = sim.iter().sum::<f64>() / sim.len() as f64;
                proj.iter()
                    .zip(&sim)
                    .map(|(p, s)| (p - mean) * (s - sm))
                    .sum()
            }
        };
        if agreement < 0.0 {
            for p in &mut proj {
                *p = -*p;
            }
        }
        let th = otsu(&proj);
        let mut mask: Mask = proj.iter().map(|&p| p > th).collect();
        if !mask.iter().any(|&b| b) {
            let top = proj
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            mask[top] = true;
        }
        Ok(mask)
    }
}

/// Segments one feature map with an axis fitted on that map alone.
pub fn segment_foreground(fm: &FeatureMap, hint: &SegmentationHint) -> Result<Mask> {
    ForegroundSegmenter::fit(std::slice::from_ref(fm))?.segment(fm, hint)
}

/// Horizontal coordinate map: foreground columns interpolate linearly from
/// −0.5 (leftmost) to +0.5 (rightmost); a single column maps to 0.
/// Background entries are `None`.
pub fn coordinate_map(mask: &[bool]) -> Result<Vec<Option<f64>>> {
    if mask.len() != GRID * GRID {
        return Err(Error::Argument(format!(
            "mask must have {} entries",
            GRID * GRID
        )));
    }
    let cols: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i % GRID)
        .collect();
    let (lo, hi) = match (cols.iter().min(), cols.iter().max()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(Error::Argument("coordinate map of an empty mask".into())),
    };
    let span = (hi - lo) as f64;
    Ok(mask
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            b.then(|| {
                if span == 0.0 {
                    0.0
                } else {
                    -0.5 + ((i % GRID) - lo) as f64 / span
                }
            })
        })
        .collect())
}

/// Patch-level downsampling of a pixel mask: a patch is foreground when at
/// least half of its pixels are.
pub fn downsample_mask(pixel_mask: &[bool], size: usize) -> Mask {
    let patch = size / GRID;
    (0..GRID * GRID)
        .map(|i| {
            let (pr, pc) = (i / GRID, i % GRID);
            let mut count = 0;
            for r in 0..patch {
                for c in 0..patch {
                    if pixel_mask[(pr * patch + r) * size + pc * patch + c] {
                        count += 1;
                    }
                }
            }
            2 * count >= patch * patch
        })
        .collect()
}
