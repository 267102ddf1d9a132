use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub const GLYPH_SIZE: usize = 64;

/// The four pose categories of the glyph corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoseCategory {
    Front,
    Back,
    Left,
    Right,
}

impl PoseCategory {
    pub const ALL: [PoseCategory; 4] = [Self::Front, Self::Back, Self::Left, Self::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Argument(format!("pose index {i} outside 0..4")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Front => "front",
            Self::Back => "back",
            Self::Left => "left",
            Self::Right => "right",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown pose category '{s}'")))
    }
}

/// Square grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphImage {
    pub size: usize,
    pub pixels: Vec<f64>,
    pub true_category: Option<PoseCategory>,
}

impl GlyphImage {
    pub fn new(size: usize, pixels: Vec<f64>, true_category: Option<PoseCategory>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Argument(format!(
                "{} pixels for a {size}x{size} image",
                pixels.len()
            )));
        }
        let pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Ok(Self {
            size,
            pixels,
            true_category,
        })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            pixels: vec![0.0; size * size],
            true_category: None,
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    /// Horizontal flip.
    pub fn mirrored(&self) -> Self {
        let n = self.size;
        let mut pixels = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                pixels[r * n + c] = self.pixels[r * n + (n - 1 - c)];
            }
        }
        Self {
            size: n,
            pixels,
            true_category: self.true_category.map(mirror_category),
        }
    }

    /// `1 − I`.
    pub fn inverted(&self) -> Self {
        Self {
            size: self.size,
            pixels: self.pixels.iter().map(|p| 1.0 - p).collect(),
            true_category: self.true_category,
        }
    }
}

fn mirror_category(c: PoseCategory) -> PoseCategory {
    match c {
        PoseCategory::Left => PoseCategory::Right,
        PoseCategory::Right => PoseCategory::Left,
        other => other,
    }
}

/// Per-seed placement and shading.
#[derive(Debug, Clone, Copy)]
struct Jitter {
    dx: f64,
    dy: f64,
    scale: f64,
    level: f64,
}

fn draw_jitter(rng: &mut impl Rng) -> Jitter {
    Jitter {
        dx: rng.random_range(-3.0..=3.0),
        dy: rng.random_range(-3.0..=3.0),
        scale: rng.random_range(0.9..=1.1),
        level: rng.random_range(0.75..=0.95),
    }
}

/// Glyph-local coordinates of a pixel center.
fn local(j: &Jitter, row: usize, col: usize) -> (f64, f64) {
    let c = GLYPH_SIZE as f64 / 2.0;
    let u = (col as f64 + 0.5 - c - j.dx) / j.scale;
    let v = (row as f64 + 0.5 - c - j.dy) / j.scale;
    (u, v)
}

fn in_ellipse(u: f64, v: f64) -> bool {
    (u / 18.0).powi(2) + (v / 20.0).powi(2) <= 1.0
}

/// Left-pointing arrow: triangular head from the tip at `u = −24` to its
/// base at `u = −4`, then a shaft up to `u = 22`.
fn in_left_arrow(u: f64, v: f64) -> bool {
    let head = (-24.0..=-4.0).contains(&u) && v.abs() <= u + 24.0;
    let shaft = (-4.0..=22.0).contains(&u) && v.abs() <= 9.0;
    head || shaft
}

fn inside(category: PoseCategory, u: f64, v: f64) -> bool {
    match category {
        PoseCategory::Front | PoseCategory::Back => in_ellipse(u, v),
        PoseCategory::Left => in_left_arrow(u, v),
        PoseCategory::Right => in_left_arrow(-u, v),
    }
}

/// Surface shading in pixel space: vertical one-pixel stripes on the front,
/// a lattice of one-pixel dots on the back, flat on the sides.
fn interior(category: PoseCategory, level: f64, row: usize, col: usize) -> f64 {
    let dim = 0.35 * level;
    let bright = match category {
        PoseCategory::Front => col.is_multiple_of(2),
        PoseCategory::Back => row.is_multiple_of(2) && col.is_multiple_of(2),
        PoseCategory::Left | PoseCategory::Right => true,
    };
    if bright {
        level
    } else {
        dim
    }
}

fn render_left_or_symmetric(category: PoseCategory, seed: u64) -> GlyphImage {
    let mut rng = rng::seeded(seed);
    let j = draw_jitter(&mut rng);
    let n = GLYPH_SIZE;
    let mut pixels = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let (u, v) = local(&j, row, col);
            let base = if inside(category, u, v) {
                interior(category, j.level, row, col)
            } else {
                0.0
            };
            let noise: f64 = rng.random_range(-0.03..=0.03);
            pixels[row * n + col] = (base + noise).clamp(0.0, 1.0);
        }
    }
    GlyphImage {
        size: n,
        pixels,
        true_category: Some(category),
    }
}

/// Deterministic jittered glyph. Right glyphs are exact mirror images of the
/// left glyph with the same seed; front and back share their silhouette.
pub fn generate_glyph(category: PoseCategory, seed: u64) -> GlyphImage {
    match category {
        PoseCategory::Right => {
            let mut g = render_left_or_symmetric(PoseCategory::Left, seed).mirrored();
            g.true_category = Some(PoseCategory::Right);
            g
        }
        other => render_left_or_symmetric(other, seed),
    }
}

/// Geometric foreground of `generate_glyph(category, seed)`, row-major.
pub fn silhouette(category: PoseCategory, seed: u64) -> Vec<bool> {
    let mut rng = rng::seeded(seed);
    let j = draw_jitter(&mut rng);
    let n = GLYPH_SIZE;
    let mut mask = vec![false; n * n];
    for row in 0..n {
        for col in 0..n {
            let src_col = if category == PoseCategory::Right {
                n - 1 - col
            } else {
                col
            };
            let cat = if category == PoseCategory::Right {
                PoseCategory::Left
            } else {
                category
            };
            let (u, v) = local(&j, row, src_col);
            mask[row * n + col] = inside(cat, u, v);
        }
    }
    mask
}

/// `per_category` glyphs of every category with seeds `base_seed + i`.
pub fn corpus(per_category: usize, base_seed: u64) -> Vec<GlyphImage> {
    PoseCategory::ALL
        .iter()
        .flat_map(|&c| (0..per_category).map(move |i| generate_glyph(c, base_seed + i as u64)))
        .collect()
}
