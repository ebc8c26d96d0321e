//! Checkpoint files.
//!
//! Layout (little-endian): magic `OGEBCKPT`, version `u32 = 1`, config block
//! (`u32` byte length, then UTF-8 `key=value` lines), `u32` tensor count, then
//! per tensor: `u32` name length, name bytes, `u32` rank, `rank × u32` dims
//! and the values as `f64`.

use std::fs;
use std::path::Path;

use super::config::CeaConfig;
use super::model::ModelParams;
use crate::io::IoError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OGEBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let block: String = params.config().to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(block.as_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.named() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(IoError::Truncated {
            offset: self.pos as u64,
            expected: self.pos as u64 + n as u64,
            available: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, IoError> {
        let n = self.u32()? as usize;
        let off = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| IoError::Parse { offset: off as u64, msg: "invalid UTF-8".into() })
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>, IoError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(IoError::BadMagic { offset: 0, found: magic.to_vec() });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::BadVersion { offset: 8, found: version });
    }
    let block_off = r.pos as u64;
    let block = r.string()?;
    let mut config = CeaConfig::default();
    for line in block.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| IoError::Parse { offset: block_off, msg: format!("bad config line {line:?}") })?;
        let known = config.set(k, v).map_err(|e| IoError::Parse { offset: block_off, msg: e.to_string() })?;
        if !known {
            return Err(IoError::Parse { offset: block_off, msg: format!("unknown config key {k}") });
        }
    }
    config.validate().map_err(|e| IoError::Parse { offset: block_off, msg: e.to_string() })?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).unwrap_or(usize::MAX);
        let raw = r.take(n.saturating_mul(8))?;
        let data = raw.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        let off = r.pos as u64;
        let t = Tensor::new(dims, data).map_err(|e| IoError::Parse { offset: off, msg: e.to_string() })?;
        named.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(IoError::Parse { offset: r.pos as u64, msg: "trailing bytes".into() });
    }
    ModelParams::from_named(config, named).map_err(|e| IoError::Parse { offset: r.pos as u64, msg: e.to_string() })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<(), IoError> {
    fs::write(path, encode_checkpoint(params))
        .map_err(|e| IoError::File { path: path.display().to_string(), source: e })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::File { path: path.display().to_string(), source: e })?;
    decode_checkpoint(&bytes)
}
