//! Corpus manifests: JSON Lines, one video per line.
//!
//! `{"video_id": "...", "split": "train"|"val", "features": "path", "ground_truth": "path"?}`
//! Relative paths resolve against the manifest's directory.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_features, read_jsonl, write_jsonl, FeatureStream, IoError};
use crate::eval::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            _ => Err(format!("unknown split {s:?} (expected train or val)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub split: Split,
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    let entries: Vec<ManifestEntry> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert((e.split, e.video_id.as_str())) {
            return Err(IoError::Invalid(format!(
                "{}: duplicate video_id {} in split {:?}",
                path.display(),
                e.video_id,
                e.split
            )));
        }
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), IoError> {
    write_jsonl(path, entries)
}

/// Streams of one split, with ground truth where the manifest references it.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub streams: Vec<FeatureStream>,
    pub ground_truth: Vec<Option<GroundTruth>>,
}

pub fn load_corpus(manifest: &Path, split: Split) -> Result<Corpus, IoError> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let mut gt_files: HashMap<PathBuf, HashMap<String, GroundTruth>> = HashMap::new();
    let mut corpus = Corpus::default();
    let mut dim = None;
    for e in read_manifest(manifest)?.into_iter().filter(|e| e.split == split) {
        let stream = read_features(&resolve(&e.features), &e.video_id)?;
        if *dim.get_or_insert(stream.dim()) != stream.dim() {
            return Err(IoError::Invalid(format!(
                "{}: dimension {} differs from corpus dimension {}",
                e.video_id,
                stream.dim(),
                dim.unwrap_or_default()
            )));
        }
        let gt = match &e.ground_truth {
            None => None,
            Some(p) => {
                let p = resolve(p);
                if !gt_files.contains_key(&p) {
                    let recs: Vec<GroundTruth> = read_jsonl(&p)?;
                    gt_files.insert(p.clone(), recs.into_iter().map(|g| (g.video_id.clone(), g)).collect());
                }
                let g = gt_files[&p]
                    .get(&e.video_id)
                    .cloned()
                    .ok_or_else(|| IoError::Invalid(format!("{}: no ground truth for {}", p.display(), e.video_id)))?;
                Some(g)
            }
        };
        corpus.streams.push(stream);
        corpus.ground_truth.push(gt);
    }
    Ok(corpus)
}
