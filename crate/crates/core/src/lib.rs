//! Online self-supervised detector learning on a simulated cluster stream.
//!
//! A planar world emits pre-segmented clusters; a multi-target tracker links
//! them into trajectories; trajectory evidence (kinematic P/N experts, or
//! odds-fused teacher confidences) becomes training labels for an online
//! logistic classifier; regret and stability metrics track convergence.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar for the common cases.

// `!(x > 0.0)` is how validation rejects NaN; matrix code indexes by design.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod detectors;
pub mod error;
pub mod experts;
pub mod fusion;
pub mod kalman;
pub mod metrics;
pub mod pipeline;
pub mod runner;
pub mod scalar;
pub mod simulator;
pub mod streams;
pub mod tracker;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DynamicModelF64 = detectors::DynamicModel<f64>;
pub type DynamicModelF32 = detectors::DynamicModel<f32>;
pub type LabeledSampleF64 = detectors::LabeledSample<f64>;
pub type LabeledSampleF32 = detectors::LabeledSample<f32>;
pub type FeatureClusterF64 = simulator::FeatureCluster<f64>;
pub type FeatureClusterF32 = simulator::FeatureCluster<f32>;
pub type TrackF64 = tracker::Track<f64>;
pub type TrackerF64 = tracker::Tracker<f64>;
pub type MetricsLogF64 = metrics::MetricsLog<f64>;
pub type PipelineF64 = pipeline::Pipeline<f64>;
pub type PipelineF32 = pipeline::Pipeline<f32>;
