//! Reference implementations shared by the integration tests and the
//! acceptance harness. Each oracle is written from the defining formula,
//! without calling the library routine it checks.
#![allow(dead_code, clippy::manual_clamp)]

use std::collections::VecDeque;

use gebd::cea::{Anchor, CeaConfig, LabeledStream, ModelParams, TrainingBatch};
use gebd::io::FeatureStream;
use gebd::tensor::{grad_check, GradCheckReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const CLAMP: f64 = 1e-7;

/// Gradient-check configuration: D=16, d=8, L=4, K=2, one layer.
pub fn tiny_config() -> CeaConfig {
    CeaConfig { feature_dim: 16, window_len: 4, model_dim: 8, layers: 1, heads: 2, ff_dim: 16, region_k: 2, alpha: 0.5 }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_stream(rng: &mut ChaCha8Rng, id: &str, frames: usize, dim: usize) -> FeatureStream {
    let data = (0..frames * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    FeatureStream::new(id, 24.0, dim, data).unwrap()
}

// ---- losses -------------------------------------------------------------

pub fn oracle_bce(eps: f64, y: bool) -> f64 {
    let e = if eps < CLAMP {
        CLAMP
    } else if eps > 1.0 - CLAMP {
        1.0 - CLAMP
    } else {
        eps
    };
    let y = if y { 1.0 } else { 0.0 };
    -(y * e.ln() + (1.0 - y) * (1.0 - e).ln())
}

pub fn oracle_rest(errors: &[f64], y_last: bool) -> f64 {
    let mut total = 0.0;
    for e in errors {
        total += e;
    }
    oracle_bce(total / errors.len() as f64, y_last)
}

pub fn oracle_combined(errors: &[f64], labels: &[bool], alpha: f64, w_pos: f64) -> f64 {
    let mut frame = 0.0;
    for (i, &e) in errors.iter().enumerate() {
        let w = if labels[i] { w_pos } else { 1.0 };
        frame += w * oracle_bce(e, labels[i]);
    }
    alpha * oracle_rest(errors, labels[labels.len() - 1]) + frame
}

/// Mean over regions of the weighted combined loss, with the positive weight
/// counted over every label slot of every region.
pub fn oracle_batch_loss(regions: &[(Vec<f64>, Vec<bool>)], alpha: f64) -> f64 {
    let pos = regions.iter().flat_map(|(_, y)| y).filter(|&&y| y).count();
    let neg = regions.iter().map(|(_, y)| y.len()).sum::<usize>() - pos;
    let w = if pos == 0 { 1.0 } else { (neg as f64 / pos as f64).max(1.0).min(100.0) };
    regions.iter().map(|(e, y)| oracle_combined(e, y, alpha, w)).sum::<f64>() / regions.len() as f64
}

pub fn oracle_cosine_error(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    let cos = dot / (na.sqrt().max(1e-12) * nb.sqrt().max(1e-12));
    (1.0 - cos.clamp(-1.0, 1.0)) / 2.0
}

/// Random region fixture: `K + 1` errors (including values in the clamp
/// zone) and labels.
pub fn loss_fixture(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>, f64) {
    let k = rng.gen_range(0..=12);
    let errors = (0..=k)
        .map(|_| match rng.gen_range(0..10) {
            0 => rng.gen_range(0.0..1e-6),
            1 => 1.0 - rng.gen_range(0.0..1e-6),
            _ => rng.gen_range(0.0..1.0),
        })
        .collect();
    let p = rng.gen_range(0.0..1.0);
    let labels = (0..=k).map(|_| rng.gen_bool(p)).collect();
    (errors, labels, rng.gen_range(0.0..2.0))
}

// ---- model --------------------------------------------------------------

/// A random labelled stream with a few positives and anchors spread over it.
pub fn tiny_batch(config: &CeaConfig, seed: u64) -> (Vec<LabeledStream>, TrainingBatch<f64>) {
    let mut r = rng(seed);
    let n = config.window_len + config.region_k + 8;
    let stream = gaussian_stream(&mut r, "tiny", n, config.feature_dim);
    let mut labels = vec![false; n];
    labels[config.region_k + 2] = true;
    labels[n - 3] = true;
    let videos = vec![LabeledStream { stream, labels }];
    let anchors: Vec<Anchor> =
        [config.region_k + 1, config.region_k + 3, n - 2].iter().map(|&frame| Anchor { video: 0, frame }).collect();
    let batch = TrainingBatch::build(&videos, &anchors, config);
    (videos, batch)
}

pub fn model_gradient_report(config: CeaConfig, seed: u64, h: f64, tol: f64) -> GradCheckReport {
    let (_, batch) = tiny_batch(&config, seed);
    let model = ModelParams::<f64>::init(config, seed);
    grad_check(model.tensors(), h, tol, |g, p| Ok(model.loss_graph(g, p, &batch)?.0)).unwrap()
}

/// The window of `L` frames preceding `t`, left-padded with frame 0.
pub fn oracle_window(stream: &FeatureStream, t: usize, l: usize) -> Vec<Vec<f64>> {
    (0..l)
        .map(|i| {
            let src = t as isize - l as isize + i as isize;
            stream.frame(src.max(0) as usize).to_vec()
        })
        .collect()
}

// ---- queue --------------------------------------------------------------

/// Mean and population standard deviation by direct summation.
pub fn batch_stats(values: &VecDeque<f64>) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Decisions of the full-queue discriminator recomputed from scratch at
/// every frame: `Some(true)` boundary, `Some(false)` not, `None` warm-up.
pub fn oracle_decisions(errors: &[f64], tau: f64, delta: usize, floor: f64) -> Vec<Option<bool>> {
    let mut q = VecDeque::new();
    let mut out = Vec::with_capacity(errors.len());
    for &e in errors {
        if q.len() < delta {
            out.push(None);
        } else {
            let (m, s) = batch_stats(&q);
            out.push(Some((e - m) / s.max(floor) > tau));
        }
        q.push_back(e);
        if q.len() > delta {
            q.pop_front();
        }
    }
    out
}

// ---- matching -----------------------------------------------------------

/// Largest one-to-one matching by exhaustive search.
pub fn brute_force_matches(preds: &[f64], gts: &[f64], duration: f64, threshold: f64) -> usize {
    fn go(i: usize, used: &mut [bool], preds: &[f64], gts: &[f64], duration: f64, threshold: f64) -> usize {
        if i == preds.len() {
            return 0;
        }
        let mut best = go(i + 1, used, preds, gts, duration, threshold);
        for j in 0..gts.len() {
            if !used[j] && (preds[i] - gts[j]).abs() / duration <= threshold + 1e-9 {
                used[j] = true;
                best = best.max(1 + go(i + 1, used, preds, gts, duration, threshold));
                used[j] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; gts.len()], preds, gts, duration, threshold)
}

pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Random scoring instance with up to `max` boundaries per side, sometimes
/// clustered so that greedy matching would be suboptimal.
pub fn matching_fixture(rng: &mut ChaCha8Rng, max: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let duration = rng.gen_range(2.0..20.0);
    let centre = rng.gen_range(0.0..duration);
    let spread = if rng.gen_bool(0.5) { duration } else { duration * 0.15 };
    let np = rng.gen_range(0..=max);
    let ng = rng.gen_range(1..=max);
    let mut draw = |n: usize| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n)
            .map(|_| (centre + rng.gen_range(-0.5f64..0.5) * spread).clamp(duration * 1e-3, duration * 0.999))
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let preds = draw(np);
    let gts = draw(ng);
    (preds, gts, duration)
}

// ---- causality ----------------------------------------------------------

/// Re-runs the streaming detector on every prefix of `stream` and returns the
/// first prefix length whose per-frame output differs from the matching
/// prefix of the full run, or `None` when all agree.
pub fn first_prefix_violation(
    model: &ModelParams<f64>,
    stream: &FeatureStream,
    config: &gebd::obd::ObdConfig,
) -> Option<usize> {
    let full = gebd::obd::detect_stream(model, stream, config).unwrap();
    for n in 1..stream.len() {
        let part = gebd::obd::detect_stream(model, &stream.prefix(n), config).unwrap();
        let same = part.decisions == full.decisions[..n]
            && part.errors == full.errors[..n]
            && part.zscores == full.zscores[..n]
            // runs closed before the cut are emitted identically
            && part.boundaries.iter().filter(|b| b.frame_span.1 + 1 < n).eq(full
                .boundaries
                .iter()
                .filter(|b| b.frame_span.1 + 1 < n));
        if !same {
            return Some(n);
        }
    }
    None
}
