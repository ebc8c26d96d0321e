//! File formats: binary feature files, JSON Lines predictions and ground
//! truth, corpus manifests and flat `key=value` settings files.

mod features;
mod manifest;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{
    decode_features, encode_features, read_features, write_features, FeatureStream, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{load_corpus, read_manifest, write_manifest, Corpus, ManifestEntry, Split};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at byte {offset}: {found:?}")]
    BadMagic { offset: u64, found: Vec<u8> },
    #[error("unsupported version {found} at byte {offset}")]
    BadVersion { offset: u64, found: u32 },
    #[error("truncated at byte {offset}: need {expected} bytes, {available} available")]
    Truncated { offset: u64, expected: u64, available: u64 },
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("{path}:{line}: {msg}")]
    Json { path: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub fps: f64,
    pub boundaries_sec: Vec<f64>,
    /// Per-frame z-scores; `null` where no score exists (frame 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zscores: Option<Vec<Option<f64>>>,
}

/// Reads a JSON Lines file, skipping blank lines. Errors carry the 1-based line.
pub fn read_jsonl<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::File { path: path.display().to_string(), source: e })?;
    parse_jsonl(BufReader::new(file), &path.display().to_string())
}

pub fn parse_jsonl<R: DeserializeOwned>(reader: impl BufRead, origin: &str) -> Result<Vec<R>, IoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::Json { path: origin.into(), line: i + 1, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| IoError::Json {
            path: origin.into(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<R: Serialize>(path: &Path, records: &[R]) -> Result<(), IoError> {
    let ctx = |e| IoError::File { path: path.display().to_string(), source: e };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(ctx)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| IoError::Invalid(e.to_string()))?;
        writeln!(f, "{line}").map_err(ctx)?;
    }
    f.flush().map_err(ctx)
}

/// Parses a flat settings file: one `key=value` per line, `#` comments.
pub fn parse_settings(text: &str) -> Result<Vec<(String, String)>, IoError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| IoError::Json {
            path: "settings".into(),
            line: i + 1,
            msg: format!("expected key=value, got {raw:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
