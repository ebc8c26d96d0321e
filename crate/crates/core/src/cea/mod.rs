//! Next-feature anticipator: a causal transformer decoder with one learnable
//! query token, its prediction-error losses, training and checkpoints.

pub mod batch;
pub mod checkpoint;
mod config;
mod gradcheck;
pub mod loss;
pub mod model;
pub mod train;

pub use batch::{Anchor, LabeledStream, TrainingBatch};
pub use config::{CeaConfig, ConfigError};
pub use gradcheck::check_model_gradients;
pub use loss::{combined_loss, cosine_error, est_loss, positive_weight, rest_loss, RegionObjective};
pub use model::{param_names, ModelParams};
pub use train::{train, train_with, EpochLog, TrainConfig, TrainError, TrainOutcome};
