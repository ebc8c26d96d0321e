//! Binary feature files.
//!
//! Layout (little-endian): magic `OGEB`, version `u32 = 1`, frame count
//! `N: u32`, dimension `D: u32`, `fps: f32`, then `N·D` `f32` values in
//! frame-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::IoError;

pub const FEATURE_MAGIC: &[u8; 4] = b"OGEB";
pub const FEATURE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// A video as `N` feature vectors of dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub video_id: String,
    pub fps: f64,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureStream {
    pub fn new(video_id: impl Into<String>, fps: f64, dim: usize, data: Vec<f64>) -> Result<Self, IoError> {
        let video_id = video_id.into();
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(IoError::Invalid(format!(
                "{video_id}: {} values do not form whole frames of dimension {dim}",
                data.len()
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(IoError::Invalid(format!("{video_id}: fps must be positive, got {fps}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(IoError::Invalid(format!("{video_id}: non-finite value at frame {}", i / dim)));
        }
        Ok(Self { video_id, fps, dim, data })
    }

    pub fn from_frames(video_id: impl Into<String>, fps: f64, frames: &[Vec<f64>]) -> Result<Self, IoError> {
        let dim = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(IoError::Invalid("ragged frames".into()));
        }
        Self::new(video_id, fps, dim, frames.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn duration_sec(&self) -> f64 {
        self.len() as f64 / self.fps
    }

    /// First `n` frames as a new stream.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.clamp(1, self.len());
        Self { video_id: self.video_id.clone(), fps: self.fps, dim: self.dim, data: self.data[..n * self.dim].to_vec() }
    }

    /// Rounds every value through `f32`, the precision of the on-disk payload.
    pub fn quantize_f32(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self
    }
}

pub fn encode_features(stream: &FeatureStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + stream.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u32).to_le_bytes());
    out.extend_from_slice(&(stream.dim as u32).to_le_bytes());
    out.extend_from_slice(&(stream.fps as f32).to_le_bytes());
    for &v in &stream.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

/// Parses the fixed header and returns `(frames, dim, fps, payload_len)`.
pub fn decode_header(bytes: &[u8], available: u64) -> Result<(usize, usize, f32, u64), IoError> {
    if bytes.len() < HEADER_LEN {
        return Err(IoError::Truncated { offset: 0, expected: HEADER_LEN as u64, available });
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(IoError::BadMagic { offset: 0, found: bytes[..4].to_vec() });
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_VERSION {
        return Err(IoError::BadVersion { offset: 4, found: version });
    }
    let n = u32_at(bytes, 8) as u64;
    let d = u32_at(bytes, 12) as u64;
    let fps = f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    if n == 0 || d == 0 {
        return Err(IoError::Invalid(format!("header declares {n} frames of dimension {d}")));
    }
    let payload = n.saturating_mul(d).saturating_mul(4);
    let expected = (HEADER_LEN as u64).saturating_add(payload);
    if expected > available {
        return Err(IoError::Truncated { offset: HEADER_LEN as u64, expected, available });
    }
    Ok((n as usize, d as usize, fps, payload))
}

pub fn decode_features(video_id: &str, bytes: &[u8]) -> Result<FeatureStream, IoError> {
    let (n, d, fps, _) = decode_header(bytes, bytes.len() as u64)?;
    let payload = &bytes[HEADER_LEN..HEADER_LEN + n * d * 4];
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    FeatureStream::new(video_id, fps as f64, d, data)
}

/// Reads a feature file; the header is validated against the file size
/// before the payload is loaded.
pub fn read_features(path: &Path, video_id: &str) -> Result<FeatureStream, IoError> {
    use std::io::Read;
    let ctx = |e| IoError::File { path: path.display().to_string(), source: e };
    let mut file = fs::File::open(path).map_err(ctx)?;
    let available = file.metadata().map_err(ctx)?.len();
    let mut header = vec![0u8; HEADER_LEN.min(available as usize)];
    file.read_exact(&mut header).map_err(ctx)?;
    let (_, _, _, payload) = decode_header(&header, available)?;
    let mut bytes = header;
    bytes.reserve_exact(payload as usize);
    file.take(payload).read_to_end(&mut bytes).map_err(ctx)?;
    decode_features(video_id, &bytes)
}

pub fn write_features(path: &Path, stream: &FeatureStream) -> Result<(), IoError> {
    let ctx = |e| IoError::File { path: path.display().to_string(), source: e };
    let mut f = fs::File::create(path).map_err(ctx)?;
    f.write_all(&encode_features(stream)).map_err(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureStream {
        let data = (0..320).map(|i| ((i as f64) * 0.37).sin()).collect();
        FeatureStream::new("v", 24.0, 32, data).unwrap().quantize_f32()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let back = decode_features("v", &encode_features(&s)).unwrap();
        assert_eq!(back.len(), 10);
        let a: Vec<u64> = s.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.fps, 24.0);
    }

    #[test]
    fn truncation_reports_expected_and_available() {
        let bytes = encode_features(&sample());
        let cut = &bytes[..bytes.len() - 3];
        match decode_features("v", cut) {
            Err(IoError::Truncated { expected, available, .. }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(available, cut.len() as u64);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversized_header_rejected() {
        let mut bytes = encode_features(&sample());
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_features("v", &bytes), Err(IoError::Truncated { .. })));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_features(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode_features("v", &bytes), Err(IoError::BadMagic { offset: 0, .. })));
        let mut bytes = encode_features(&sample());
        bytes[4] = 9;
        assert!(matches!(decode_features("v", &bytes), Err(IoError::BadVersion { offset: 4, found: 9 })));
    }
}
