use super::glyph::{GlyphImage, GLYPH_SIZE};
use crate::error::{Error, Result};

pub const PATCH: usize = 4;
pub const GRID: usize = GLYPH_SIZE / PATCH;
pub const FEATURE_DIM: usize = 5;

/// Patch descriptor grid plus a global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `GRID × GRID` descriptors, row-major.
    pub patches: Vec<[f64; FEATURE_DIM]>,
    pub cls: [f64; FEATURE_DIM],
}

impl FeatureMap {
    #[inline]
    pub fn patch(&self, row: usize, col: usize) -> &[f64; FEATURE_DIM] {
        &self.patches[row * GRID + col]
    }
}

/// Descriptor of one `PATCH × PATCH` block: mean intensity, RMS horizontal
/// and vertical pixel differences inside the block, standard deviation. The
/// fifth channel is filled in from neighboring blocks.
fn describe(img: &GlyphImage, pr: usize, pc: usize) -> [f64; FEATURE_DIM] {
    let (r0, c0) = (pr * PATCH, pc * PATCH);
    let px = |r: usize, c: usize| img.at(r0 + r, c0 + c);
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut gh = 0.0;
    let mut gv = 0.0;
    for r in 0..PATCH {
        for c in 0..PATCH {
            let v = px(r, c);
            sum += v;
            sq += v * v;
            if c + 1 < PATCH {
                gh += (px(r, c + 1) - v).powi(2);
            }
            if r + 1 < PATCH {
                gv += (px(r + 1, c) - v).powi(2);
            }
        }
    }
    let n = (PATCH * PATCH) as f64;
    let pairs = (PATCH * (PATCH - 1)) as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    [
        mean,
        (gh / pairs).sqrt(),
        (gv / pairs).sqrt(),
        var.sqrt(),
        0.0,
    ]
}

/// Signed horizontal slope of block means: half the difference between the
/// right and left neighbors (clamped at the grid edge). Periodic textures
/// whose period divides the block size give zero; silhouette edges do not.
/// Mirroring an image negates this channel.
fn fill_slope(patches: &mut [[f64; FEATURE_DIM]]) {
    let means: Vec<f64> = patches.iter().map(|p| p[0]).collect();
    for (i, p) in patches.iter_mut().enumerate() {
        let (r, c) = (i / GRID, i % GRID);
        let left = means[r * GRID + c.saturating_sub(1)];
        let right = means[r * GRID + (c + 1).min(GRID - 1)];
        p[FEATURE_DIM - 1] = 0.5 * (right - left);
    }
}

/// Toy feature extractor: non-overlapping patch descriptors; the global
/// descriptor is the saliency-weighted mean of the patch descriptors (slope
/// taken by magnitude, so it is mirror invariant), with saliency the patch's
/// distance from the image's median descriptor.
pub fn extract_features(img: &GlyphImage) -> Result<FeatureMap> {
    if img.size != GLYPH_SIZE {
        return Err(Error::Argument(format!(
            "feature extractor expects {GLYPH_SIZE}x{GLYPH_SIZE} input, got {0}x{0}",
            img.size
        )));
    }
    let mut patches: Vec<[f64; FEATURE_DIM]> = (0..GRID * GRID)
        .map(|i| describe(img, i / GRID, i % GRID))
        .collect();
    fill_slope(&mut patches);
    let unsigned: Vec<[f64; FEATURE_DIM]> = patches
        .iter()
        .map(|p| {
            let mut q = *p;
            q[FEATURE_DIM - 1] = q[FEATURE_DIM - 1].abs();
            q
        })
        .collect();
    let mut median = [0.0; FEATURE_DIM];
    for (k, m) in median.iter_mut().enumerate() {
        let mut col: Vec<f64> = unsigned.iter().map(|p| p[k]).collect();
        col.sort_by(f64::total_cmp);
        *m = col[col.len() / 2];
    }
    let mut cls = [0.0; FEATURE_DIM];
    let mut total = 0.0;
    for p in &unsigned {
        let w: f64 = p
            .iter()
            .zip(&median)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        total += w;
        for k in 0..FEATURE_DIM {
            cls[k] += w * p[k];
        }
    }
    if total > 0.0 {
        for c in &mut cls {
            *c /= total;
        }
    }
    Ok(FeatureMap { patches, cls })
}
