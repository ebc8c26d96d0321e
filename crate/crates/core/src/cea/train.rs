//! Seeded, deterministic training loop.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::batch::{Anchor, LabeledStream, TrainingBatch};
use super::config::{CeaConfig, ConfigError};
use super::model::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::{AdamW, AdamWConfig, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no video has at least {needed} frames (window + region + 1)")]
    NoData { needed: usize },
    #[error("video {video}: feature dimension {found}, model expects {expected}")]
    FeatureDim { video: String, expected: usize, found: usize },
    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    NonFinite { what: &'static str, epoch: usize, step: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Anchors per optimizer step (rounded up to whole chunks).
    pub batch_anchors: usize,
    /// Consecutive anchors drawn together from one video.
    pub chunk_len: usize,
    /// Chunks sampled per video per epoch; `None` covers every anchor once.
    pub chunks_per_video: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_anchors: 64,
            chunk_len: 16,
            chunks_per_video: None,
            lr: 1e-4,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_anchors == 0 || self.chunk_len == 0 {
            return Err(ConfigError("batch_anchors and chunk_len must be positive".into()));
        }
        if self.chunks_per_video == Some(0) {
            return Err(ConfigError("chunks_per_video must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(ConfigError(format!("bad optimizer settings lr={} wd={}", self.lr, self.weight_decay)));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_anchors", self.batch_anchors.to_string()),
            ("chunk_len", self.chunk_len.to_string()),
            ("chunks_per_video", self.chunks_per_video.map_or("all".into(), |c| c.to_string())),
            ("lr", format!("{:?}", self.lr)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError(format!("bad value {value:?} for {key}")))
        }
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_anchors" => self.batch_anchors = parse(key, value)?,
            "chunk_len" => self.chunk_len = parse(key, value)?,
            "chunks_per_video" => {
                self.chunks_per_video = if value.trim() == "all" { None } else { Some(parse(key, value)?) }
            }
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub steps: usize,
    pub anchors: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<EpochLog>,
}

/// Groups of consecutive anchors for one epoch, in shuffled order.
fn epoch_chunks(
    videos: &[(usize, std::ops::Range<usize>)],
    tc: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Anchor>> {
    let mut chunks = Vec::new();
    for (video, range) in videos {
        let make = |start: usize| -> Vec<Anchor> {
            (start..(start + tc.chunk_len).min(range.end)).map(|frame| Anchor { video: *video, frame }).collect()
        };
        match tc.chunks_per_video {
            None => {
                let mut s = range.start;
                while s < range.end {
                    chunks.push(make(s));
                    s += tc.chunk_len;
                }
            }
            Some(n) => {
                let last_start = range.end.saturating_sub(tc.chunk_len).max(range.start);
                for _ in 0..n {
                    chunks.push(make(rng.gen_range(range.start..=last_start)));
                }
            }
        }
    }
    chunks.shuffle(rng);
    chunks
}

pub fn train<T: Scalar>(
    config: &CeaConfig,
    tc: &TrainConfig,
    dataset: &[LabeledStream],
) -> Result<TrainOutcome<T>, TrainError> {
    train_with(config, tc, dataset, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    config: &CeaConfig,
    tc: &TrainConfig,
    dataset: &[LabeledStream],
    mut on_epoch: impl FnMut(&EpochLog, &ModelParams<T>),
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    tc.validate()?;
    let needed = config.window_len + config.region_k + 1;
    let mut videos = Vec::new();
    for (i, v) in dataset.iter().enumerate() {
        if v.stream.dim() != config.feature_dim {
            return Err(TrainError::FeatureDim {
                video: v.stream.video_id.clone(),
                expected: config.feature_dim,
                found: v.stream.dim(),
            });
        }
        if v.stream.len() >= needed {
            videos.push((i, v.anchor_frames(config.region_k)));
        } else {
            debug!("skipping {}: {} frames < {needed}", v.stream.video_id, v.stream.len());
        }
    }
    if videos.is_empty() {
        return Err(TrainError::NoData { needed });
    }

    let mut params = ModelParams::<T>::init(*config, tc.seed);
    let opt_cfg = AdamWConfig { lr: T::lit(tc.lr), weight_decay: T::lit(tc.weight_decay), ..AdamWConfig::default() };
    let mut opt = AdamW::new(opt_cfg, params.tensors());
    let mut log = Vec::with_capacity(tc.epochs);
    let mut step = 0usize;

    for epoch in 0..tc.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(epoch as u64 + 1);
        let chunks = epoch_chunks(&videos, tc, &mut rng);

        let (mut loss_sum, mut steps, mut anchors_seen) = (0.0, 0usize, 0usize);
        let mut batch: Vec<Anchor> = Vec::with_capacity(tc.batch_anchors + tc.chunk_len);
        let mut iter = chunks.into_iter().peekable();
        while let Some(chunk) = iter.next() {
            batch.extend(chunk);
            if batch.len() < tc.batch_anchors && iter.peek().is_some() {
                continue;
            }
            let tb = TrainingBatch::<T>::build(dataset, &batch, config);
            let (loss, grads) = params.loss_and_grads(&tb)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { what: "loss", epoch, step });
            }
            opt.step(params.tensors_mut(), &grads)?;
            if !params.is_finite() {
                return Err(TrainError::NonFinite { what: "parameters", epoch, step });
            }
            loss_sum += loss.as_f64();
            steps += 1;
            step += 1;
            anchors_seen += batch.len();
            batch.clear();
        }
        let entry = EpochLog { epoch, train_loss: loss_sum / steps.max(1) as f64, steps, anchors: anchors_seen };
        info!("epoch {} train_loss {:.6} steps {} anchors {}", epoch, entry.train_loss, steps, anchors_seen);
        on_epoch(&entry, &params);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}
