//! Toy stand-in for a pretrained text-to-image prior: a pose-labeled
//! Gaussian mixture whose noisy marginals, scores and category posteriors
//! are all closed form, plus a differentiable renderer.
//!
//! A "prompt" is modeled by choosing a mixture instance.

mod mixture;
mod renderer;

pub use mixture::{Component, Covariance, NoisyMixture, PoseLabeledMixture, Responsibilities};
pub use renderer::Renderer;
