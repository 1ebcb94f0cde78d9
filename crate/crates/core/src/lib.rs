//! Analysis toolkit for modality conflict in vision-language models.
//!
//! The crate covers the whole offline pipeline:
//!
//! - [`dataset`]: deterministic generation of colored-shape images with
//!   conflicting, matching, color-free and other-shape captions, plus the
//!   color-disjoint train/test split.
//! - [`store`]: the on-disk activation dump (JSON index + raw little-endian
//!   `f32` blobs) shared with external extractors.
//! - [`probe`]: lasso-logistic probes trained by proximal gradient, swept over
//!   layers and activation kinds.
//! - [`resolution`]: resolution confidence, alignment tallies and the binned
//!   relationship between probe strength and confidence.
//! - [`attention`]: group-based attention differencing per (layer, head).
//! - [`fixtures`]: planted-signal dumps with known ground truth.
//! - [`plot`]: standalone SVG charts for the emitted CSV tables.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the concrete
//! aliases below fix the precision used by the command-line tool.

pub mod attention;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod plot;
pub mod probe;
pub mod resolution;
mod rng;
pub mod scalar;
pub mod store;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Probe with single-precision weights, as persisted to disk.
pub type ProbeModelF32 = probe::ProbeModel<f32>;
/// Probe with double-precision weights.
pub type ProbeModelF64 = probe::ProbeModel<f64>;
pub type TrainConfigF32 = probe::TrainConfig<f32>;
pub type TrainConfigF64 = probe::TrainConfig<f64>;
pub type HeadDeltaTableF32 = attention::HeadDeltaTable<f32>;
pub type HeadDeltaTableF64 = attention::HeadDeltaTable<f64>;
pub type ResolutionRecordF32 = resolution::ResolutionRecord<f32>;
pub type ResolutionRecordF64 = resolution::ResolutionRecord<f64>;
pub type BinnedRelationshipF32 = resolution::BinnedRelationship<f32>;
pub type BinnedRelationshipF64 = resolution::BinnedRelationship<f64>;
