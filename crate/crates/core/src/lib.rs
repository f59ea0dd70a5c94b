//! Semantic classification of class-agnostic segmentation masks.
//!
//! A small MLP head maps per-mask embeddings to class scores. It is trained
//! from image-level labels with k-max-pooled multiple-instance learning, then
//! refined by distilling from a frozen copy of itself while pushing masks the
//! teacher got wrong or was unsure about towards uniform predictions.
//! Inference thresholds the per-mask scores, suppresses overlapping masks and
//! paints a per-pixel label map; [`metrics`] scores those maps.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`). Training
//! runs in `f64`; datasets and weight files store `f32`.

pub mod dataset;
pub mod distill;
pub mod error;
pub mod grid;
pub mod infer;
pub mod matrix;
pub mod metrics;
pub mod mil;
pub mod mlp;
pub mod ops;
pub mod oracle_tasks;
pub mod pgm;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

/// Head parameters in training precision.
pub type Head = mlp::MlpParams<f64>;
/// Head parameters in storage precision.
pub type Head32 = mlp::MlpParams<f32>;
pub type Adam = mlp::AdamState<f64>;
pub type Bag = trainer::Bag<f64>;
pub type TrainData = trainer::TrainData<f64>;
pub type TeacherStats = distill::TeacherStats<f64>;
pub type BagScore = mil::BagScore<f64>;
