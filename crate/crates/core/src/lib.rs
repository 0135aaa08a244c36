//! Tooling for segmenting exfoliated graphene flakes in optical micrographs.
//!
//! The crate covers the whole pipeline: luma-domain adaptive gamma
//! correction tuned by a particle swarm against a noise-aware quality score,
//! chroma-based grouping of images, class statistics and iterative
//! stratification of imbalanced masks, augmentation, the object-contextual
//! representation head, weighted cross-entropy training of a per-pixel
//! classifier with per-group weak learning, and the evaluation metrics.
//!
//! Everything that consumes randomness takes an explicit seed so runs are
//! reproducible regardless of thread count.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datasetops;
pub mod enhance;
pub mod error;
pub mod grouping;
pub mod imagecore;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod pso;
pub mod quality;
pub mod rng;
pub mod segmath;
pub mod synth;

pub use error::{Error, Result};
pub use imagecore::{Image, LabelMask, Plane, YCbCrImage, NUM_CLASSES};
pub use manifest::{DatasetManifest, Record};
