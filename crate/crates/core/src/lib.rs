//! Distribution rectification and uniform score distillation on
//! analytically tractable toy priors.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classifier;
pub mod distill;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod rectify;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod worldmodel;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Schedule = schedule::DiffusionSchedule<f64>;
pub type Schedule32 = schedule::DiffusionSchedule<f32>;
pub type Mixture = worldmodel::PoseLabeledMixture<f64>;
pub type Mixture32 = worldmodel::PoseLabeledMixture<f32>;
pub type Renderer = worldmodel::Renderer<f64>;
pub type Rectifier = rectify::Rectifier<f64>;
pub type IntervalEma = estimator::IntervalEma<f64>;
pub type ParticleSet = distill::ParticleSet<f64>;
pub type World = distill::World<f64>;
pub type DistillConfig = distill::DistillConfig<f64>;
pub type RunReport = distill::RunReport<f64>;
