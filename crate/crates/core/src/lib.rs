//! Online generic event boundary detection.
//!
//! A causal transformer anticipates each incoming frame feature from the
//! frames before it; the scaled cosine distance between the prediction and
//! the observed frame is an error signal trained to spike at event
//! boundaries. A z-score test against a FIFO of recent errors turns the
//! signal into per-frame decisions, and consecutive positive frames collapse
//! to one boundary timestamp. [`eval`] scores the timestamps with the Rel.Dis
//! F1 protocol; [`synth`] plants boundaries in synthetic feature streams.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which everything outside the numeric core uses.

// validation uses `!(x > 0.0)` on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cea;
pub mod eval;
pub mod io;
pub mod obd;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type Model = cea::ModelParams<f64>;
pub type Model32 = cea::ModelParams<f32>;
pub type Batch = cea::TrainingBatch<f64>;
pub type Queue = obd::QueueState<f64>;
pub type Detection = obd::Detection<f64>;
