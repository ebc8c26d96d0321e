//! Finite-difference check of the full training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::batch::{Anchor, LabeledStream, TrainingBatch};
use super::config::CeaConfig;
use super::model::ModelParams;
use crate::io::FeatureStream;
use crate::tensor::{grad_check, GradCheckError, GradCheckReport};

/// Checks the gradient of the batch objective with respect to every
/// parameter of a freshly initialized model, on a random labelled stream
/// with two boundaries and three overlapping anchors.
pub fn check_model_gradients(
    config: &CeaConfig,
    seed: u64,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, GradCheckError> {
    config.validate().map_err(|e| GradCheckError::Setup(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.window_len + config.region_k + 8;
    let data = (0..n * config.feature_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let stream = FeatureStream::new("gradcheck", 24.0, config.feature_dim, data).expect("finite gaussian data");
    let mut labels = vec![false; n];
    labels[config.region_k + 2] = true;
    labels[n - 3] = true;
    let videos = [LabeledStream { stream, labels }];
    let anchors: Vec<Anchor> =
        [config.region_k + 1, config.region_k + 3, n - 2].iter().map(|&frame| Anchor { video: 0, frame }).collect();
    let batch = TrainingBatch::build(&videos, &anchors, config);
    let model = ModelParams::<f64>::init(*config, seed);
    grad_check(model.tensors(), h, tol, |g, p| Ok(model.loss_graph(g, p, &batch)?.0))
}
