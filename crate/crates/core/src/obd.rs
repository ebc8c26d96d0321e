//! Online boundary discrimination.
//!
//! Each incoming error is z-normalized against a fixed-size FIFO of the
//! preceding errors and flagged as a boundary when the z-score exceeds `tau`.
//! Runs of consecutive flagged frames collapse to one boundary at the run's
//! center, emitted as soon as the run ends.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cea::{cosine_error, ModelParams};
use crate::io::FeatureStream;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ObdError {
    #[error("non-finite error value {0} at frame {1}")]
    NonFinite(f64, usize),
    #[error("stream {video}: feature dimension {found}, checkpoint expects {expected}")]
    FeatureDim { video: String, expected: usize, found: usize },
    #[error("invalid discriminator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// What enters the queue after each decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum QueuePolicy {
    /// Every error is pushed, boundaries included.
    #[default]
    RetainAll,
    /// Errors flagged as boundaries are left out of the queue. Ablation only.
    InliersOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObdConfig {
    pub tau: f64,
    /// Queue capacity.
    pub delta: usize,
    pub sigma_floor: f64,
    /// Suppress decisions until the queue is full.
    pub warmup: bool,
    pub policy: QueuePolicy,
}

impl Default for ObdConfig {
    fn default() -> Self {
        Self { tau: 1.5, delta: 21, sigma_floor: 1e-8, warmup: true, policy: QueuePolicy::RetainAll }
    }
}

impl ObdConfig {
    pub fn validate(&self) -> Result<(), ObdError> {
        if !(self.tau > 0.0) {
            return Err(ObdError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.delta < 2 {
            return Err(ObdError::Config(format!("delta must be at least 2, got {}", self.delta)));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(ObdError::Config("sigma_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tau", format!("{:?}", self.tau)),
            ("delta", self.delta.to_string()),
            ("sigma_floor", format!("{:?}", self.sigma_floor)),
            ("warmup", self.warmup.to_string()),
            (
                "queue_policy",
                match self.policy {
                    QueuePolicy::RetainAll => "retain_all".into(),
                    QueuePolicy::InliersOnly => "inliers_only".into(),
                },
            ),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ObdError> {
        let bad = || ObdError::Config(format!("bad value {value:?} for {key}"));
        let v = value.trim();
        match key {
            "tau" => self.tau = v.parse().map_err(|_| bad())?,
            "delta" => self.delta = v.parse().map_err(|_| bad())?,
            "sigma_floor" => self.sigma_floor = v.parse().map_err(|_| bad())?,
            "warmup" => self.warmup = v.parse().map_err(|_| bad())?,
            "queue_policy" => {
                self.policy = match v {
                    "retain_all" => QueuePolicy::RetainAll,
                    "inliers_only" => QueuePolicy::InliersOnly,
                    _ => return Err(bad()),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Upper bound on pushes between exact re-summations of the cached moments.
const REFRESH_EVERY: usize = 1024;

/// FIFO of past errors with running moments.
///
/// Sums are kept relative to a shift taken from the queue contents, which
/// avoids cancellation in the variance. The moments are re-summed exactly
/// once the whole queue has turned over, so the shift always stays within
/// the range of recent values; the cost is amortized O(1) per push.
#[derive(Debug, Clone)]
pub struct QueueState<T> {
    capacity: usize,
    entries: VecDeque<T>,
    shift: Option<T>,
    sum: T,
    sum_sq: T,
    since_refresh: usize,
}

impl<T: Scalar> QueueState<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            shift: None,
            sum: T::zero(),
            sum_sq: T::zero(),
            since_refresh: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    pub fn push(&mut self, x: T) {
        let k = *self.shift.get_or_insert(x);
        if self.entries.len() == self.capacity {
            if let Some(old) = self.entries.pop_front() {
                self.sum -= old - k;
                self.sum_sq -= (old - k) * (old - k);
            }
        }
        self.entries.push_back(x);
        self.sum += x - k;
        self.sum_sq += (x - k) * (x - k);
        self.since_refresh += 1;
        if self.since_refresh >= self.capacity.min(REFRESH_EVERY) {
            self.refresh();
        }
    }

    fn refresh(&mut self) {
        let k = self.entries.front().copied().unwrap_or_else(T::zero);
        self.shift = Some(k);
        self.sum = self.entries.iter().map(|&x| x - k).sum();
        self.sum_sq = self.entries.iter().map(|&x| (x - k) * (x - k)).sum();
        self.since_refresh = 0;
    }

    pub fn mean(&self) -> T {
        if self.entries.is_empty() {
            return T::zero();
        }
        let n = T::lit(self.entries.len() as f64);
        self.shift.unwrap_or_else(T::zero) + self.sum / n
    }

    /// Population standard deviation.
    pub fn std(&self) -> T {
        if self.entries.is_empty() {
            return T::zero();
        }
        let n = T::lit(self.entries.len() as f64);
        let m = self.sum / n;
        (self.sum_sq / n - m * m).max(T::zero()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Boundary,
    NotBoundary,
    Warmup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    pub decision: Decision,
    pub zscore: T,
}

/// Scores one error against the queue, then updates the queue.
pub fn obd_step<T: Scalar>(state: &mut QueueState<T>, eps: T, config: &ObdConfig) -> Result<StepOutcome<T>, ObdError> {
    if !eps.is_finite() {
        return Err(ObdError::NonFinite(eps.as_f64(), state.len()));
    }
    let zscore =
        if state.is_empty() { T::zero() } else { (eps - state.mean()) / state.std().max(T::lit(config.sigma_floor)) };
    let decision = if state.is_empty() || (config.warmup && !state.is_full()) {
        Decision::Warmup
    } else if zscore > T::lit(config.tau) {
        Decision::Boundary
    } else {
        Decision::NotBoundary
    };
    let push = match config.policy {
        QueuePolicy::RetainAll => true,
        QueuePolicy::InliersOnly => decision != Decision::Boundary,
    };
    if push {
        state.push(eps);
    }
    Ok(StepOutcome { decision, zscore })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPrediction {
    pub timestamp_sec: f64,
    /// Inclusive frame range of the run.
    pub frame_span: (usize, usize),
    pub peak_zscore: f64,
}

/// Online run grouping.
#[derive(Debug, Clone)]
pub struct RunGrouper {
    fps: f64,
    open: Option<(usize, usize, f64)>,
}

impl RunGrouper {
    pub fn new(fps: f64) -> Self {
        Self { fps, open: None }
    }

    fn close(&mut self) -> Option<BoundaryPrediction> {
        self.open.take().map(|(start, end, peak)| BoundaryPrediction {
            timestamp_sec: (start + end) as f64 / 2.0 / self.fps,
            frame_span: (start, end),
            peak_zscore: peak,
        })
    }

    /// Feeds the decision for `frame`; returns a prediction when a run ends.
    pub fn push(&mut self, frame: usize, boundary: bool, zscore: f64) -> Option<BoundaryPrediction> {
        if boundary {
            match &mut self.open {
                Some((_, end, peak)) if *end + 1 == frame => {
                    *end = frame;
                    *peak = peak.max(zscore);
                    None
                }
                _ => {
                    let done = self.close();
                    self.open = Some((frame, frame, zscore));
                    done
                }
            }
        } else {
            self.close()
        }
    }

    pub fn finish(&mut self) -> Option<BoundaryPrediction> {
        self.close()
    }
}

/// Collapses per-frame boundary flags into center-of-run predictions.
pub fn group_runs(decisions: &[bool], fps: f64) -> Vec<BoundaryPrediction> {
    let mut g = RunGrouper::new(fps);
    let mut out: Vec<BoundaryPrediction> =
        decisions.iter().enumerate().filter_map(|(t, &b)| g.push(t, b, f64::NAN)).collect();
    out.extend(g.finish());
    for p in &mut out {
        p.peak_zscore = f64::NAN;
    }
    out
}

/// Per-frame result of the streaming detector.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome<T> {
    pub frame: usize,
    /// `None` for frame 0, which has no past to predict from.
    pub error: Option<T>,
    pub zscore: Option<T>,
    pub decision: Decision,
    /// A boundary whose run ended with this frame.
    pub emitted: Option<BoundaryPrediction>,
}

/// Frame-at-a-time detector: anticipator, queue and run grouping.
///
/// Only frames already pushed are ever read. The detector keeps the first
/// frame (for left padding) and the `L` most recent frames.
pub struct StreamingDetector<'m, T: Scalar> {
    params: &'m ModelParams<T>,
    config: ObdConfig,
    queue: QueueState<T>,
    grouper: RunGrouper,
    first: Vec<T>,
    recent: VecDeque<Vec<T>>,
    frames_seen: usize,
}

impl<'m, T: Scalar> StreamingDetector<'m, T> {
    pub fn new(params: &'m ModelParams<T>, config: ObdConfig, fps: f64) -> Result<Self, ObdError> {
        config.validate()?;
        if !(fps > 0.0) {
            return Err(ObdError::Config(format!("fps must be positive, got {fps}")));
        }
        let window = params.config().window_len;
        Ok(Self {
            params,
            config,
            queue: QueueState::new(config.delta),
            grouper: RunGrouper::new(fps),
            first: Vec::new(),
            recent: VecDeque::with_capacity(window),
            frames_seen: 0,
        })
    }

    pub fn queue(&self) -> &QueueState<T> {
        &self.queue
    }

    fn window(&self) -> Vec<T> {
        let c = self.params.config();
        let mut w = Vec::with_capacity(c.window_len * c.feature_dim);
        let missing = c.window_len - self.recent.len();
        for _ in 0..missing {
            w.extend_from_slice(&self.first);
        }
        for f in &self.recent {
            w.extend_from_slice(f);
        }
        w
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<FrameOutcome<T>, ObdError> {
        let c = *self.params.config();
        if frame.len() != c.feature_dim {
            return Err(ObdError::FeatureDim { video: "live".into(), expected: c.feature_dim, found: frame.len() });
        }
        if let Some(v) = frame.iter().find(|v| !v.is_finite()) {
            return Err(ObdError::NonFinite(*v, self.frames_seen));
        }
        let t = self.frames_seen;
        let actual: Vec<T> = frame.iter().map(|&v| T::lit(v)).collect();
        let outcome = if t == 0 {
            FrameOutcome { frame: 0, error: None, zscore: None, decision: Decision::Warmup, emitted: None }
        } else {
            let window = Tensor::new(vec![c.window_len, c.feature_dim], self.window())?;
            let pred = self.params.predict(window)?;
            let eps = cosine_error(&actual, pred.data());
            let step = obd_step(&mut self.queue, eps, &self.config)?;
            let emitted = self.grouper.push(t, step.decision == Decision::Boundary, step.zscore.as_f64());
            FrameOutcome { frame: t, error: Some(eps), zscore: Some(step.zscore), decision: step.decision, emitted }
        };
        if t == 0 {
            self.first = actual.clone();
        }
        if self.recent.len() == c.window_len {
            self.recent.pop_front();
        }
        self.recent.push_back(actual);
        self.frames_seen += 1;
        Ok(outcome)
    }

    /// Closes any open run at end of stream.
    pub fn finish(&mut self) -> Option<BoundaryPrediction> {
        self.grouper.finish()
    }
}

/// Full output of running the detector over a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub video_id: String,
    pub fps: f64,
    /// Per-frame errors; `None` for frame 0.
    pub errors: Vec<Option<T>>,
    pub zscores: Vec<Option<T>>,
    pub decisions: Vec<Decision>,
    pub boundaries: Vec<BoundaryPrediction>,
}

impl<T: Scalar> Detection<T> {
    pub fn boundary_times(&self) -> Vec<f64> {
        self.boundaries.iter().map(|b| b.timestamp_sec).collect()
    }

    pub fn to_record(&self, with_zscores: bool) -> crate::io::PredictionRecord {
        crate::io::PredictionRecord {
            video_id: self.video_id.clone(),
            fps: self.fps,
            boundaries_sec: self.boundary_times(),
            zscores: with_zscores.then(|| self.zscores.iter().map(|z| z.map(Scalar::as_f64)).collect()),
        }
    }
}

/// Processes a stream strictly frame by frame.
pub fn detect_stream<T: Scalar>(
    params: &ModelParams<T>,
    stream: &FeatureStream,
    config: &ObdConfig,
) -> Result<Detection<T>, ObdError> {
    let expected = params.config().feature_dim;
    if stream.dim() != expected {
        return Err(ObdError::FeatureDim { video: stream.video_id.clone(), expected, found: stream.dim() });
    }
    let mut det = StreamingDetector::new(params, *config, stream.fps)?;
    let n = stream.len();
    let mut out = Detection {
        video_id: stream.video_id.clone(),
        fps: stream.fps,
        errors: Vec::with_capacity(n),
        zscores: Vec::with_capacity(n),
        decisions: Vec::with_capacity(n),
        boundaries: Vec::new(),
    };
    for t in 0..n {
        let o = det.push(stream.frame(t))?;
        out.errors.push(o.error);
        out.zscores.push(o.zscore);
        out.decisions.push(o.decision);
        out.boundaries.extend(o.emitted);
    }
    out.boundaries.extend(det.finish());
    Ok(out)
}

/// Runs the discriminator over an error trace whose entry `i` belongs to
/// frame `i + 1` (the layout of [`ModelParams::error_trace`]).
pub fn discriminate<T: Scalar>(
    video_id: &str,
    fps: f64,
    trace: &[T],
    config: &ObdConfig,
) -> Result<Detection<T>, ObdError> {
    config.validate()?;
    let mut queue = QueueState::new(config.delta);
    let mut grouper = RunGrouper::new(fps);
    let mut out = Detection {
        video_id: video_id.to_string(),
        fps,
        errors: vec![None],
        zscores: vec![None],
        decisions: vec![Decision::Warmup],
        boundaries: Vec::new(),
    };
    for (i, &eps) in trace.iter().enumerate() {
        let t = i + 1;
        let s = obd_step(&mut queue, eps, config)?;
        out.errors.push(Some(eps));
        out.zscores.push(Some(s.zscore));
        out.decisions.push(s.decision);
        out.boundaries.extend(grouper.push(t, s.decision == Decision::Boundary, s.zscore.as_f64()));
    }
    out.boundaries.extend(grouper.finish());
    Ok(out)
}

/// Batched scoring followed by [`discriminate`]; identical decisions to
/// [`detect_stream`] up to floating-point reassociation in the batched forward.
pub fn detect_batched<T: Scalar>(
    params: &ModelParams<T>,
    stream: &FeatureStream,
    config: &ObdConfig,
) -> Result<Detection<T>, ObdError> {
    let trace = params.error_trace(stream)?;
    discriminate(&stream.video_id, stream.fps, &trace, config)
}
