//! Windows, labels and training batches.

use std::collections::HashMap;

use super::config::CeaConfig;
use super::loss::RegionObjective;
use crate::eval::GroundTruth;
use crate::io::FeatureStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A feature stream with per-frame boundary labels.
#[derive(Debug, Clone)]
pub struct LabeledStream {
    pub stream: FeatureStream,
    pub labels: Vec<bool>,
}

impl LabeledStream {
    /// Frame `t` is positive iff some boundary timestamp rounds to it.
    pub fn from_ground_truth(stream: FeatureStream, gt: &GroundTruth) -> Self {
        let labels = frame_labels(&gt.boundaries_sec, stream.fps, stream.len());
        Self { stream, labels }
    }

    /// Anchor frames whose whole region has predictions (`t − K ≥ 1`).
    pub fn anchor_frames(&self, region_k: usize) -> std::ops::Range<usize> {
        (region_k + 1).min(self.stream.len())..self.stream.len()
    }
}

pub fn frame_labels(boundaries_sec: &[f64], fps: f64, frames: usize) -> Vec<bool> {
    let mut labels = vec![false; frames];
    for &b in boundaries_sec {
        let f = (b * fps).round();
        if f >= 0.0 && (f as usize) < frames {
            labels[f as usize] = true;
        }
    }
    labels
}

/// Appends the `L` frames preceding `t` (oldest first) to `out`, left-padding
/// with frame 0 when `t < L`. Requires `t ≥ 1`.
pub fn push_window<T: Scalar>(stream: &FeatureStream, t: usize, window_len: usize, out: &mut Vec<T>) {
    assert!(t >= 1 && t <= stream.len(), "window needs at least one past frame");
    for i in 0..window_len {
        let src = (t + i).saturating_sub(window_len);
        out.extend(stream.frame(src).iter().map(|&v| T::lit(v)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Anchor {
    pub video: usize,
    pub frame: usize,
}

/// Everything needed to evaluate the batch objective.
///
/// Regions of neighbouring anchors overlap, so each distinct `(video, frame)`
/// window is materialized once and regions index into it.
#[derive(Debug, Clone)]
pub struct TrainingBatch<T> {
    pub anchors: Vec<Anchor>,
    /// `(U·L) × D` stacked windows, one per distinct predicted frame.
    pub windows: Tensor<T>,
    /// `U × D` observed features at the predicted frames.
    pub targets: Tensor<T>,
    pub objective: RegionObjective,
}

impl<T: Scalar> TrainingBatch<T> {
    pub fn build(videos: &[LabeledStream], anchors: &[Anchor], config: &CeaConfig) -> Self {
        assert!(!anchors.is_empty(), "batch needs at least one anchor");
        let d = config.feature_dim;
        let mut slot_of: HashMap<Anchor, usize> = HashMap::new();
        let mut order: Vec<Anchor> = Vec::new();
        let mut regions = Vec::with_capacity(anchors.len());
        for a in anchors {
            assert!(a.frame > config.region_k, "anchor {a:?} has no full region");
            let region = (a.frame - config.region_k..=a.frame)
                .map(|t| {
                    let key = Anchor { video: a.video, frame: t };
                    *slot_of.entry(key).or_insert_with(|| {
                        order.push(key);
                        order.len() - 1
                    })
                })
                .collect();
            regions.push(region);
        }
        let u = order.len();
        let mut windows = Vec::with_capacity(u * config.window_len * d);
        let mut targets = Vec::with_capacity(u * d);
        let mut labels = Vec::with_capacity(u);
        for key in &order {
            let v = &videos[key.video];
            push_window(&v.stream, key.frame, config.window_len, &mut windows);
            targets.extend(v.stream.frame(key.frame).iter().map(|&x| T::lit(x)));
            labels.push(v.labels[key.frame]);
        }
        Self {
            anchors: anchors.to_vec(),
            windows: Tensor::new(vec![u * config.window_len, d], windows).expect("window buffer"),
            targets: Tensor::new(vec![u, d], targets).expect("target buffer"),
            objective: RegionObjective::new(regions, labels, config.alpha),
        }
    }

    pub fn distinct_windows(&self) -> usize {
        self.targets.rows()
    }
}
