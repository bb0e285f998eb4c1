//! Auditing annotated corpora for dialect-correlated annotation bias with a
//! structural topic model.
//!
//! The pipeline: [`corpus`] ingestion and preprocessing, [`dialect`] scoring,
//! topic model estimation in [`stm`] with prevalence covariates
//! `[1, label, P(AAE), label·P(AAE)]`, model diagnostics in [`selection`],
//! covariate effect curves in [`effects`], synthetic ground truth in
//! [`synth`], topic inspection in [`report`], and the end-to-end driver in
//! [`pipeline`].
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the pipeline uses.

pub mod corpus;
pub mod dialect;
pub mod effects;
pub mod error;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod seed;
pub mod selection;
pub mod stm;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DialectModel = dialect::DialectModel<f64>;
pub type DialectPosterior = dialect::DialectPosterior<f64>;
pub type PrevalenceDesign = stm::PrevalenceDesign<f64>;
pub type StmModel = stm::StmModel<f64>;
pub type DocPosterior = stm::DocPosterior<f64>;
pub type FittedStm = stm::FittedStm<f64>;
pub type EffectEstimate = effects::EffectEstimate<f64>;
pub type EffectCurve = effects::EffectCurve<f64>;
pub type GroundTruth = synth::GroundTruth<f64>;

pub type StmModel32 = stm::StmModel<f32>;
pub type FittedStm32 = stm::FittedStm<f32>;
