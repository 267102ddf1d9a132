//! Training-free pose classifier: patch descriptors, PCA foreground
//! segmentation, coordinate maps, texture and orientation similarities
//! fused by an and-gate softmax; plus the synthetic glyph corpus and the
//! adapters that let the classifier act on noisy samples.

mod adapter;
mod features;
mod glyph;
mod pgm;
mod pose;
mod segment;

pub use adapter::{
    classifier_posterior_adapter, classify_direct, glyph_prior, DirectPosterior, PointClassifier,
    TweediePosterior,
};
pub use features::{extract_features, FeatureMap, FEATURE_DIM, GRID, PATCH};
pub use glyph::{corpus, generate_glyph, silhouette, GlyphImage, PoseCategory, GLYPH_SIZE};
pub use pgm::{read_pgm, write_pgm};
pub use pose::{
    default_templates, normalize, orientation_similarity, texture_similarity, Analysis,
    ClassifierMode, Normalization, OrientationRule, PoseClassifier, Template,
};
pub use segment::{
    coordinate_map, downsample_mask, segment_foreground, ForegroundSegmenter, Mask,
    SegmentationHint,
};
