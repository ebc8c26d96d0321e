//! Rel.Dis F1 evaluation.
//!
//! A prediction matches a ground-truth boundary when their distance divided
//! by the video duration is at most the threshold. Matching is one-to-one
//! and maximum-cardinality; counts are summed over the corpus before
//! precision, recall and F1 are computed at each of the ten thresholds
//! `0.05, 0.10, …, 0.50`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_jsonl, IoError, PredictionRecord};

pub const NUM_THRESHOLDS: usize = 10;
/// Slack on the inclusive `rel_dis ≤ threshold` test, absorbing decimal
/// representation error (e.g. `|5.2 − 5.0| / 4` evaluates above `0.05`).
pub const MATCH_SLACK: f64 = 1e-9;

pub fn thresholds() -> [f64; NUM_THRESHOLDS] {
    std::array::from_fn(|i| (i + 1) as f64 / 20.0)
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions reference videos without ground truth: {0:?}")]
    MissingVideos(Vec<String>),
    #[error("duplicate {kind} entry for video {video_id}")]
    Duplicate { kind: &'static str, video_id: String },
    #[error("invalid ground truth for {video_id}: {msg}")]
    InvalidGroundTruth { video_id: String, msg: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub duration_sec: f64,
    pub boundaries_sec: Vec<f64>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |msg: String| EvalError::InvalidGroundTruth { video_id: self.video_id.clone(), msg };
        if !(self.duration_sec > 0.0 && self.duration_sec.is_finite()) {
            return Err(bad(format!("duration {}", self.duration_sec)));
        }
        for w in self.boundaries_sec.windows(2) {
            if w[1] <= w[0] {
                return Err(bad("boundaries not strictly increasing".into()));
            }
        }
        if let Some(&b) = self.boundaries_sec.iter().find(|&&b| !(b > 0.0 && b < self.duration_sec)) {
            return Err(bad(format!("boundary {b} outside (0, duration)")));
        }
        Ok(())
    }
}

/// `|pred − gt| / duration`.
pub fn rel_dis(pred_sec: f64, gt_sec: f64, duration_sec: f64) -> f64 {
    (pred_sec - gt_sec).abs() / duration_sec
}

pub fn within_threshold(rel: f64, threshold: f64) -> bool {
    rel <= threshold + MATCH_SLACK
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Size of a maximum one-to-one matching via augmenting paths.
fn maximum_matching(adj: &[Vec<usize>], right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; right];
    let mut size = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; right];
        if augment(u, adj, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

pub fn match_and_score(preds: &[f64], gts: &[f64], duration_sec: f64, threshold: f64) -> MatchCounts {
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|&p| {
            gts.iter()
                .enumerate()
                .filter(|(_, &g)| within_threshold(rel_dis(p, g, duration_sec), threshold))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let tp = maximum_matching(&adj, gts.len());
    MatchCounts { tp, fp: preds.len() - tp, fn_: gts.len() - tp }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdScore {
    pub threshold: f64,
    #[serde(flatten)]
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ThresholdScore {
    pub fn from_counts(threshold: f64, counts: MatchCounts) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { threshold, counts, precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoReport {
    pub video_id: String,
    pub f1: Vec<f64>,
    pub avg_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<ThresholdScore>,
    pub avg_f1: f64,
    pub per_video: Vec<VideoReport>,
}

impl EvalReport {
    pub fn f1_at(&self, threshold: f64) -> f64 {
        self.thresholds.iter().find(|t| (t.threshold - threshold).abs() < 1e-12).map_or(f64::NAN, |t| t.f1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,tp,fp,fn,precision,recall,f1\n");
        for t in &self.thresholds {
            s.push_str(&format!(
                "{:.2},{},{},{},{:.6},{:.6},{:.6}\n",
                t.threshold, t.counts.tp, t.counts.fp, t.counts.fn_, t.precision, t.recall, t.f1
            ));
        }
        s.push_str(&format!("avg,,,,,,{:.6}\n", self.avg_f1));
        s
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Scores predictions against ground truth. Videos with ground truth but no
/// prediction record count as having no predicted boundaries.
pub fn evaluate(preds: &[PredictionRecord], gts: &[GroundTruth]) -> Result<EvalReport, EvalError> {
    let mut gt_by_id: BTreeMap<&str, &GroundTruth> = BTreeMap::new();
    for g in gts {
        g.validate()?;
        if gt_by_id.insert(&g.video_id, g).is_some() {
            return Err(EvalError::Duplicate { kind: "ground-truth", video_id: g.video_id.clone() });
        }
    }
    let mut pred_by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for p in preds {
        if pred_by_id.insert(&p.video_id, p).is_some() {
            return Err(EvalError::Duplicate { kind: "prediction", video_id: p.video_id.clone() });
        }
    }
    let mut missing: Vec<String> =
        pred_by_id.keys().filter(|id| !gt_by_id.contains_key(*id)).map(|s| s.to_string()).collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(EvalError::MissingVideos(missing));
    }

    let ths = thresholds();
    let mut totals = [MatchCounts::default(); NUM_THRESHOLDS];
    let mut per_video = Vec::with_capacity(gt_by_id.len());
    for (id, gt) in &gt_by_id {
        let mut p: Vec<f64> = pred_by_id.get(id).map(|r| r.boundaries_sec.clone()).unwrap_or_default();
        p.sort_by(f64::total_cmp);
        let f1: Vec<f64> = ths
            .iter()
            .zip(totals.iter_mut())
            .map(|(&th, total)| {
                let c = match_and_score(&p, &gt.boundaries_sec, gt.duration_sec, th);
                *total += c;
                ThresholdScore::from_counts(th, c).f1
            })
            .collect();
        per_video.push(VideoReport { video_id: id.to_string(), avg_f1: mean(&f1), f1 });
    }
    let scores: Vec<ThresholdScore> =
        ths.iter().zip(totals).map(|(&th, c)| ThresholdScore::from_counts(th, c)).collect();
    let avg_f1 = mean(&scores.iter().map(|s| s.f1).collect::<Vec<_>>());
    Ok(EvalReport { thresholds: scores, avg_f1, per_video })
}

pub fn evaluate_files(pred_path: &Path, gt_path: &Path) -> Result<EvalReport, EvalError> {
    let preds: Vec<PredictionRecord> = read_jsonl(pred_path)?;
    let gts: Vec<GroundTruth> = read_jsonl(gt_path)?;
    evaluate(&preds, &gts)
}

/// Video ids present in `ids` more than once.
pub fn duplicate_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    ids.into_iter().filter(|id| !seen.insert(*id)).map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_dis_cases() {
        assert_eq!(rel_dis(3.0, 3.0, 10.0), 0.0);
        assert!((rel_dis(2.0, 2.1, 10.0) - 0.01).abs() < 1e-12);
        // threshold edge is inclusive
        let r = rel_dis(5.2, 5.0, 4.0);
        assert!(r > 0.05);
        assert!(within_threshold(r, 0.05));
        assert!(!within_threshold(rel_dis(5.21, 5.0, 4.0), 0.05));
    }

    #[test]
    fn thresholds_are_exact_twentieths() {
        let t = thresholds();
        assert_eq!(t[0], 0.05);
        assert_eq!(t[2], 0.15);
        assert_eq!(t[9], 0.5);
    }

    #[test]
    fn one_to_one_matching() {
        let c = match_and_score(&[4.9, 5.1], &[5.0], 10.0, 0.05);
        assert_eq!(c, MatchCounts { tp: 1, fp: 1, fn_: 0 });
        let c = match_and_score(&[], &[1.0, 2.0], 10.0, 0.5);
        assert_eq!(c, MatchCounts { tp: 0, fp: 0, fn_: 2 });
    }

    #[test]
    fn greedy_trap_is_solved_optimally() {
        // pred 0 can match either gt; pred 1 only gt 0. Greedy in time order
        // gives pred 0 → gt 0 and leaves pred 1 unmatched.
        let c = match_and_score(&[1.0, 0.55], &[1.0 - 0.4, 1.4], 1.0, 0.45);
        assert_eq!(c.tp, 2);
    }

    #[test]
    fn f1_zero_over_zero_is_zero() {
        let s = ThresholdScore::from_counts(0.1, MatchCounts::default());
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ground_truth_validation() {
        let g = GroundTruth { video_id: "a".into(), duration_sec: 10.0, boundaries_sec: vec![2.0, 1.0] };
        assert!(g.validate().is_err());
        let g = GroundTruth { video_id: "a".into(), duration_sec: 10.0, boundaries_sec: vec![10.0] };
        assert!(g.validate().is_err());
    }
}
