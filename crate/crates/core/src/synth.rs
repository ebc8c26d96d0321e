//! Seeded synthetic feature streams with planted event boundaries.
//!
//! A video is a concatenation of segments. Each segment owns a latent anchor
//! direction on the unit sphere and evolves around it under one of several
//! dynamics, plus isotropic noise. Segment joints are the ground-truth
//! boundaries. Every video draws from its own RNG stream, so output does
//! not depend on generation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::GroundTruth;
use crate::io::{FeatureStream, PredictionRecord};
use crate::obd::group_runs;

#[derive(Debug, Error, PartialEq)]
#[error("invalid synthetic spec: {0}")]
pub struct SynthError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    ConstantDrift,
    Sinusoidal,
    Ar1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    HardCut,
    /// Linear cross-fade over `blend_frames` frames.
    LinearBlend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_videos: usize,
    /// Inclusive frame-count range.
    pub frames: (usize, usize),
    pub feature_dim: usize,
    /// Inclusive range of planted boundaries per video.
    pub events_per_video: (usize, usize),
    /// Each segment picks one of these uniformly.
    pub dynamics: Vec<Dynamics>,
    pub transitions: Vec<Transition>,
    pub blend_frames: (usize, usize),
    pub noise_std: f64,
    /// Per-segment multiplier on `noise_std`, drawn uniformly.
    pub noise_scale: (f64, f64),
    /// Shortest segment, in frames.
    pub min_segment: usize,
    /// Minimum cosine distance `1 − cos` between adjacent segment anchors.
    pub min_separation: f64,
    /// When set, boundaries come in pairs separated by a short segment of
    /// this many frames (inclusive range).
    pub cluster_gap: Option<(usize, usize)>,
    pub drift_rate: f64,
    pub sine_amplitude: f64,
    pub ar_coeff: f64,
    pub ar_std: f64,
    pub fps: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_videos: 10,
            frames: (96, 144),
            feature_dim: 32,
            events_per_video: (3, 7),
            dynamics: vec![Dynamics::ConstantDrift, Dynamics::Sinusoidal, Dynamics::Ar1],
            transitions: vec![Transition::HardCut, Transition::LinearBlend],
            blend_frames: (1, 3),
            noise_std: 0.05,
            noise_scale: (1.0, 1.0),
            min_segment: 12,
            min_separation: 0.3,
            cluster_gap: None,
            drift_rate: 0.01,
            sine_amplitude: 0.3,
            ar_coeff: 0.8,
            ar_std: 0.05,
            fps: 24.0,
            seed: 0,
            id_prefix: "synth".into(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError(m.into()));
        if self.frames.0 > self.frames.1 || self.events_per_video.0 > self.events_per_video.1 {
            return err("empty frame or event range");
        }
        if self.blend_frames.0 == 0 || self.blend_frames.0 > self.blend_frames.1 {
            return err("blend range must be nonempty and start at 1 or more");
        }
        if self.dynamics.is_empty() || self.transitions.is_empty() {
            return err("dynamics and transitions must be nonempty");
        }
        if self.feature_dim < 2 || self.min_segment == 0 {
            return err("feature_dim ≥ 2 and min_segment ≥ 1 required");
        }
        if !(self.noise_std >= 0.0) || !(self.noise_scale.0 >= 0.0 && self.noise_scale.0 <= self.noise_scale.1) {
            return err("noise_std and noise_scale must be nonnegative ranges");
        }
        if !(self.fps > 0.0) {
            return err("fps must be positive");
        }
        if !(0.0..2.0).contains(&self.min_separation) {
            return err("min_separation must lie in [0, 2)");
        }
        if let Some((a, b)) = self.cluster_gap {
            if a == 0 || a > b {
                return err("cluster gap range must be nonempty and positive");
            }
        }
        let k = self.events_per_video.1;
        let short = self.cluster_gap.map_or(0, |(_, b)| b);
        let need = (k + 1) * self.min_segment.max(self.blend_frames.1 + 1) + short * k.div_ceil(2);
        if self.frames.0 < need {
            return Err(SynthError(format!("{} frames cannot hold {k} boundaries (need {need})", self.frames.0)));
        }
        Ok(())
    }
}

impl Dynamics {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "constant_drift" => Some(Self::ConstantDrift),
            "sinusoidal" => Some(Self::Sinusoidal),
            "ar1" => Some(Self::Ar1),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::ConstantDrift => "constant_drift",
            Self::Sinusoidal => "sinusoidal",
            Self::Ar1 => "ar1",
        }
    }
}

impl Transition {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "hard_cut" => Some(Self::HardCut),
            "linear_blend" => Some(Self::LinearBlend),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::HardCut => "hard_cut",
            Self::LinearBlend => "linear_blend",
        }
    }
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, SynthError> {
    value.trim().parse().map_err(|_| SynthError(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<V>(key: &str, value: &str, f: fn(&str) -> Option<V>) -> Result<Vec<V>, SynthError> {
    value.split(',').map(|s| f(s.trim()).ok_or_else(|| SynthError(format!("{key}: unknown entry {s:?}")))).collect()
}

impl SynthSpec {
    /// Flat `key=value` view of every field, for logging.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let join = |v: Vec<&str>| v.join(",");
        let (gap_min, gap_max) =
            self.cluster_gap.map_or(("none".to_string(), "none".to_string()), |(a, b)| (a.to_string(), b.to_string()));
        vec![
            ("num_videos", self.num_videos.to_string()),
            ("frames_min", self.frames.0.to_string()),
            ("frames_max", self.frames.1.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("events_min", self.events_per_video.0.to_string()),
            ("events_max", self.events_per_video.1.to_string()),
            ("dynamics", join(self.dynamics.iter().map(|d| d.name()).collect())),
            ("transitions", join(self.transitions.iter().map(|t| t.name()).collect())),
            ("blend_min", self.blend_frames.0.to_string()),
            ("blend_max", self.blend_frames.1.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("noise_scale_min", self.noise_scale.0.to_string()),
            ("noise_scale_max", self.noise_scale.1.to_string()),
            ("min_segment", self.min_segment.to_string()),
            ("min_separation", self.min_separation.to_string()),
            ("cluster_gap_min", gap_min),
            ("cluster_gap_max", gap_max),
            ("drift_rate", self.drift_rate.to_string()),
            ("sine_amplitude", self.sine_amplitude.to_string()),
            ("ar_coeff", self.ar_coeff.to_string()),
            ("ar_std", self.ar_std.to_string()),
            ("fps", self.fps.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field from its `key=value` form; `Ok(false)` for unknown keys.
    /// `cluster_gap_min`/`cluster_gap_max` accept `none` to disable clustering.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, SynthError> {
        match key {
            "num_videos" => self.num_videos = parse_value(key, value)?,
            "frames_min" => self.frames.0 = parse_value(key, value)?,
            "frames_max" => self.frames.1 = parse_value(key, value)?,
            "feature_dim" => self.feature_dim = parse_value(key, value)?,
            "events_min" => self.events_per_video.0 = parse_value(key, value)?,
            "events_max" => self.events_per_video.1 = parse_value(key, value)?,
            "dynamics" => self.dynamics = parse_list(key, value, Dynamics::parse)?,
            "transitions" => self.transitions = parse_list(key, value, Transition::parse)?,
            "blend_min" => self.blend_frames.0 = parse_value(key, value)?,
            "blend_max" => self.blend_frames.1 = parse_value(key, value)?,
            "noise_std" => self.noise_std = parse_value(key, value)?,
            "noise_scale_min" => self.noise_scale.0 = parse_value(key, value)?,
            "noise_scale_max" => self.noise_scale.1 = parse_value(key, value)?,
            "min_segment" => self.min_segment = parse_value(key, value)?,
            "min_separation" => self.min_separation = parse_value(key, value)?,
            "cluster_gap_min" | "cluster_gap_max" => {
                if value.trim() == "none" {
                    self.cluster_gap = None;
                } else {
                    let v: usize = parse_value(key, value)?;
                    let (lo, hi) = self.cluster_gap.unwrap_or((v, v));
                    self.cluster_gap = Some(if key == "cluster_gap_min" { (v, hi.max(v)) } else { (lo.min(v), v) });
                }
            }
            "drift_rate" => self.drift_rate = parse_value(key, value)?,
            "sine_amplitude" => self.sine_amplitude = parse_value(key, value)?,
            "ar_coeff" => self.ar_coeff = parse_value(key, value)?,
            "ar_std" => self.ar_std = parse_value(key, value)?,
            "fps" => self.fps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SynthCorpus {
    pub streams: Vec<FeatureStream>,
    pub ground_truth: Vec<GroundTruth>,
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Clean trajectory of one segment: `len` frames around `anchor`.
fn trajectory(spec: &SynthSpec, dyn_: Dynamics, anchor: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = anchor.len();
    match dyn_ {
        Dynamics::ConstantDrift => {
            let u = unit_vector(rng, d);
            (0..len).map(|s| anchor.iter().zip(&u).map(|(a, u)| a + spec.drift_rate * s as f64 * u).collect()).collect()
        }
        Dynamics::Sinusoidal => {
            let u = unit_vector(rng, d);
            let period = rng.gen_range(12.0..36.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (0..len)
                .map(|s| {
                    let w = spec.sine_amplitude * (std::f64::consts::TAU * s as f64 / period + phase).sin();
                    anchor.iter().zip(&u).map(|(a, u)| a + w * u).collect()
                })
                .collect()
        }
        Dynamics::Ar1 => {
            let noise = Normal::new(0.0, spec.ar_std.max(0.0)).expect("finite std");
            let mut z = vec![0.0; d];
            (0..len)
                .map(|_| {
                    for zi in z.iter_mut() {
                        *zi = spec.ar_coeff * *zi + noise.sample(rng);
                    }
                    anchor.iter().zip(&z).map(|(a, z)| a + z).collect()
                })
                .collect()
        }
    }
}

/// Segment lengths summing to `n`.
fn segment_lengths(spec: &SynthSpec, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let floor = spec.min_segment.max(spec.blend_frames.1 + 1);
    let mut lens = vec![floor; k + 1];
    let mut flexible: Vec<usize> = (0..=k).collect();
    if let Some((lo, hi)) = spec.cluster_gap {
        // segments 1, 3, … (never the last) are the short gaps inside the
        // boundary pairs (b0, b1), (b2, b3), …
        flexible.clear();
        for (i, len) in lens.iter_mut().enumerate() {
            if i % 2 == 1 && i < k {
                *len = rng.gen_range(lo..=hi);
            } else {
                flexible.push(i);
            }
        }
    }
    let used: usize = lens.iter().sum();
    let extra = n - used;
    // stars and bars over the flexible segments
    let mut cuts: Vec<usize> = (0..flexible.len() - 1).map(|_| rng.gen_range(0..=extra)).collect();
    cuts.sort_unstable();
    let mut prev = 0;
    for (j, &seg) in flexible.iter().enumerate() {
        let c = if j < cuts.len() { cuts[j] } else { extra };
        lens[seg] += c - prev;
        prev = c;
    }
    lens
}

fn generate_video(spec: &SynthSpec, index: usize) -> (FeatureStream, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = rng.gen_range(spec.frames.0..=spec.frames.1);
    let k = rng.gen_range(spec.events_per_video.0..=spec.events_per_video.1);
    let lens = segment_lengths(spec, n, k, &mut rng);
    let d = spec.feature_dim;
    let max_blend = spec.blend_frames.1;

    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(lens.len());
    for i in 0..lens.len() {
        let mut a = unit_vector(&mut rng, d);
        if i > 0 {
            let mut tries = 0;
            while 1.0 - cosine(&a, &anchors[i - 1]) < spec.min_separation && tries < 10_000 {
                a = unit_vector(&mut rng, d);
                tries += 1;
            }
        }
        anchors.push(a);
    }

    let mut frames: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut boundaries = Vec::with_capacity(k);
    let mut carry: Vec<Vec<f64>> = Vec::new();
    for (i, &len) in lens.iter().enumerate() {
        let dyn_ = spec.dynamics[rng.gen_range(0..spec.dynamics.len())];
        // extra frames let the next segment blend out of this one
        let clean = trajectory(spec, dyn_, &anchors[i], len + max_blend, &mut rng);
        let scale = if spec.noise_scale.0 == spec.noise_scale.1 {
            spec.noise_scale.0
        } else {
            rng.gen_range(spec.noise_scale.0..=spec.noise_scale.1)
        };
        let noise = Normal::new(0.0, spec.noise_std * scale).expect("finite std");
        let start = frames.len();
        let (blend, width) = if i == 0 {
            (false, 0)
        } else {
            match spec.transitions[rng.gen_range(0..spec.transitions.len())] {
                Transition::HardCut => (false, 1),
                Transition::LinearBlend => (true, rng.gen_range(spec.blend_frames.0..=spec.blend_frames.1)),
            }
        };
        if i > 0 {
            let center = start as f64 + (width as f64 - 1.0) / 2.0;
            boundaries.push(center / spec.fps);
        }
        for s in 0..len {
            let mut f = clean[s].clone();
            if blend && s < width {
                let lam = (s + 1) as f64 / (width + 1) as f64;
                for (x, old) in f.iter_mut().zip(&carry[s]) {
                    *x = lam * *x + (1.0 - lam) * old;
                }
            }
            for x in f.iter_mut() {
                *x += noise.sample(&mut rng);
            }
            frames.push(f);
        }
        carry = clean[len..].to_vec();
    }

    let video_id = format!("{}_{:05}", spec.id_prefix, index);
    let stream = FeatureStream::from_frames(&video_id, spec.fps, &frames).expect("finite frames").quantize_f32();
    let gt = GroundTruth { video_id, duration_sec: n as f64 / spec.fps, boundaries_sec: boundaries };
    (stream, gt)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let (streams, ground_truth) = (0..spec.num_videos).map(|i| generate_video(spec, i)).unzip();
    Ok(SynthCorpus { streams, ground_truth })
}

/// Train and validation corpora from one spec: the training videos use
/// `spec.seed` and ids `train_NNNNN`, the validation videos `spec.seed + 1`
/// and ids `val_NNNNN`. `spec.num_videos` is ignored.
pub fn generate_splits(spec: &SynthSpec, train: usize, val: usize) -> Result<(SynthCorpus, SynthCorpus), SynthError> {
    let t = generate(&SynthSpec { num_videos: train, id_prefix: "train".into(), ..spec.clone() })?;
    let v = generate(&SynthSpec {
        num_videos: val,
        seed: spec.seed.wrapping_add(1),
        id_prefix: "val".into(),
        ..spec.clone()
    })?;
    Ok((t, v))
}

/// Boundaries per frame over a corpus.
pub fn boundary_rate(streams: &[FeatureStream], gts: &[GroundTruth]) -> f64 {
    let frames: usize = streams.iter().map(FeatureStream::len).sum();
    let bounds: usize = gts.iter().map(|g| g.boundaries_sec.len()).sum();
    bounds as f64 / frames.max(1) as f64
}

/// Flags each frame independently with probability `rate`, then groups runs.
pub fn baseline_random_detector(
    streams: &[FeatureStream],
    rate: f64,
    seed: u64,
) -> Result<Vec<PredictionRecord>, SynthError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(SynthError(format!("rate must lie in [0, 1], got {rate}")));
    }
    Ok(streams
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let flags: Vec<bool> = (0..s.len()).map(|_| rng.gen_bool(rate)).collect();
            PredictionRecord {
                video_id: s.video_id.clone(),
                fps: s.fps,
                boundaries_sec: group_runs(&flags, s.fps).iter().map(|b| b.timestamp_sec).collect(),
                zscores: None,
            }
        })
        .collect())
}
