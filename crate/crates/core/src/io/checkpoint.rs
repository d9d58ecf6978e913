//! Checkpoint container: 8-byte magic `MDEPCKPT`, version u32, a manifest of
//! named tensors (name, rank, extents, dtype code, payload offset), then the
//! little-endian payload. Write-then-read is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::net::{DepthNet, NetConfig, PoseNet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MDEPCKPT";
pub const VERSION: u32 = 1;
/// dtype code for f64 little-endian payload entries.
pub const DTYPE_F64: u32 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic (expected MDEPCKPT)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    BadVersion { found: u32, expected: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("unknown dtype code {0}")]
    BadDtype(u32),
    #[error("checkpoint missing tensor '{0}'")]
    MissingTensor(String),
    #[error("tensor '{name}' has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

#[derive(Debug)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serializes entries in the given order; payload offsets are strictly
/// increasing and non-overlapping by construction.
pub fn write_entries(path: &Path, entries: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    let mut manifest = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    manifest.extend_from_slice(MAGIC);
    manifest.extend_from_slice(&VERSION.to_le_bytes());
    manifest.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let offset = payload.len() as u64;
        manifest.extend_from_slice(&(name.len() as u32).to_le_bytes());
        manifest.extend_from_slice(name.as_bytes());
        manifest.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &e in tensor.shape() {
            manifest.extend_from_slice(&(e as u64).to_le_bytes());
        }
        manifest.extend_from_slice(&DTYPE_F64.to_le_bytes());
        manifest.extend_from_slice(&offset.to_le_bytes());
        for v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = manifest;
    out.write_all(&payload)?;
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_entries(path: &Path) -> Result<Vec<Entry>, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8, "magic").map(|m| m != MAGIC).unwrap_or(true) {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32("entry count")? as usize;
    let mut metas = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| CheckpointError::Truncated("non-utf8 name".into()))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let dtype = r.u32("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(CheckpointError::BadDtype(dtype));
        }
        let offset = r.u64("offset")? as usize;
        metas.push((name, shape, offset));
    }
    let payload_start = r.pos;
    let mut entries = Vec::with_capacity(count);
    for (name, shape, offset) in metas {
        let numel: usize = shape.iter().product();
        let start = payload_start + offset;
        let end = start + numel * 8;
        if end > bytes.len() {
            return Err(CheckpointError::Truncated(format!("payload of '{name}'")));
        }
        let data: Vec<f64> = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

const CONFIG_KEYS: [&str; 6] = [
    "config/base_channels",
    "config/state_dim",
    "config/patch_size",
    "config/num_scales",
    "config/min_depth",
    "config/max_depth",
];

/// Writes both networks plus the scalar net config into one checkpoint.
pub fn save_model(
    path: &Path,
    depth: &mut DepthNet,
    pose: &mut PoseNet,
) -> Result<(), CheckpointError> {
    let cfg = depth.config;
    let cfg_values = [
        cfg.base_channels as f64,
        cfg.state_dim as f64,
        cfg.patch_size as f64,
        cfg.num_scales as f64,
        cfg.min_depth,
        cfg.max_depth,
    ];
    let mut entries: Vec<(String, Tensor)> = CONFIG_KEYS
        .iter()
        .zip(cfg_values)
        .map(|(k, v)| (k.to_string(), Tensor::scalar(v)))
        .collect();
    depth.for_each_param(&mut |name, t| entries.push((name.to_string(), t.clone())));
    pose.for_each_param(&mut |name, t| entries.push((name.to_string(), t.clone())));
    write_entries(path, &entries)
}

/// Rebuilds both networks from a checkpoint written by [`save_model`].
pub fn load_model(path: &Path) -> Result<(DepthNet, PoseNet), CheckpointError> {
    let entries = read_entries(path)?;
    let map: BTreeMap<String, Entry> =
        entries.into_iter().map(|e| (e.name.clone(), e)).collect();
    let get = |k: &str| -> Result<f64, CheckpointError> {
        map.get(k)
            .map(|e| e.data[0])
            .ok_or_else(|| CheckpointError::MissingTensor(k.to_string()))
    };
    let cfg = NetConfig {
        base_channels: get(CONFIG_KEYS[0])? as usize,
        state_dim: get(CONFIG_KEYS[1])? as usize,
        patch_size: get(CONFIG_KEYS[2])? as usize,
        blocks_per_stage: [2, 2, 2, 2],
        num_scales: get(CONFIG_KEYS[3])? as usize,
        min_depth: get(CONFIG_KEYS[4])?,
        max_depth: get(CONFIG_KEYS[5])?,
    };
    let mut depth = DepthNet::new(cfg, 0);
    let mut pose = PoseNet::new(0);
    let mut missing: Option<CheckpointError> = None;
    let mut assign = |name: &str, t: &mut Tensor| {
        if missing.is_some() {
            return;
        }
        match map.get(name) {
            None => missing = Some(CheckpointError::MissingTensor(name.to_string())),
            Some(e) => {
                if e.shape != t.shape() {
                    missing = Some(CheckpointError::ShapeMismatch {
                        name: name.to_string(),
                        found: e.shape.clone(),
                        expected: t.shape().to_vec(),
                    });
                } else {
                    *t = Tensor::param(e.data.clone(), &e.shape);
                }
            }
        }
    };
    depth.for_each_param(&mut |name, t| assign(name, t));
    pose.for_each_param(&mut |name, t| assign(name, t));
    match missing {
        Some(e) => Err(e),
        None => Ok((depth, pose)),
    }
}
