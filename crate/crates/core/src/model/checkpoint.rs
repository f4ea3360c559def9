//! Self-describing checkpoint container.
//!
//! Layout: magic `DTCK`, a little-endian `u32` format version, a `u64` header
//! length, a JSON header (model config, phase tag, free-form metadata and the
//! name, shape and offset of every array), then all arrays as little-endian
//! `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DTCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub phase: u8,
    pub arrays: BTreeMap<String, NamedArray>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    phase: u8,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, a)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    shape: a.shape.clone(),
                    offset,
                };
                offset += a.data.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            phase: self.phase,
            meta: self.meta.clone(),
            arrays,
        })?;
        let mut buf = Vec::with_capacity(16 + header.len() + 4 * offset);
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for a in self.arrays.values() {
            for v in &a.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = 16usize
            .checked_add(hlen)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..body])?;
        let payload = &bytes[body..];
        if payload.len() % 4 != 0 {
            return Err(bad("payload is not a whole number of f32 values".into()));
        }
        let values = payload.len() / 4;
        let mut arrays = BTreeMap::new();
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            if e.offset + n > values {
                return Err(bad(format!("array {} overruns the payload", e.name)));
            }
            let data = payload[4 * e.offset..4 * (e.offset + n)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.insert(e.name, NamedArray { shape: e.shape, data });
        }
        Ok(Self {
            config: header.config,
            phase: header.phase,
            arrays,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }

    /// Arrays under `prefix.`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        let p = format!("{prefix}.");
        self.arrays
            .iter()
            .filter_map(|(k, a)| k.strip_prefix(&p).map(|rest| (rest.to_string(), (a.shape.clone(), a.data.clone()))))
            .collect()
    }

    pub fn insert_group(&mut self, prefix: &str, arrays: BTreeMap<String, (Vec<usize>, Vec<f32>)>) {
        for (k, (shape, data)) in arrays {
            self.arrays.insert(format!("{prefix}.{k}"), NamedArray { shape, data });
        }
    }
}
