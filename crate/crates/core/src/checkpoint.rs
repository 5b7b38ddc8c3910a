//! Binary container shared by every trained network.
//!
//! Layout: the 8-byte magic `RSGCKPT1`, a little-endian `u32` header length,
//! the JSON header, a little-endian `u64` value count, then the parameter
//! blob as little-endian `f32`. The header carries the network kind, its
//! architecture config and the training state; it never contains wall-clock
//! data, so identical runs produce identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RSGCKPT1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub iteration: u64,
    pub seed: u64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    arch: serde_json::Value,
    state: TrainState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub arch: serde_json::Value,
    pub state: TrainState,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, arch: &impl Serialize, state: TrainState, params: Vec<f32>) -> Result<Self> {
        Ok(Self { kind: kind.into(), arch: serde_json::to_value(arch)?, state, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header { kind: self.kind.clone(), arch: self.arch.clone(), state: self.state.clone() };
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| "truncated file".to_string());
        if take(0, 8)? != MAGIC {
            return Err("bad magic".into());
        }
        let hlen = u32::from_le_bytes(take(8, 4)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(12, hlen)?).map_err(|e| format!("header: {e}"))?;
        let at = 12 + hlen;
        let count = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
        let blob = take(at + 8, count.checked_mul(4).ok_or("bad count")?)?;
        if bytes.len() != at + 8 + 4 * count {
            return Err("trailing bytes".into());
        }
        let params = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { kind: header.kind, arch: header.arch, state: header.state, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint { path: path.into(), reason })
    }

    /// Loads and checks the network kind.
    pub fn load_kind(path: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let path = path.as_ref();
        let ck = Self::load(path)?;
        if ck.kind != kind {
            return Err(Error::Checkpoint { path: path.into(), reason: format!("expected a {kind} checkpoint, found {}", ck.kind) });
        }
        Ok(ck)
    }

    pub fn arch<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.arch.clone())?)
    }

    /// Hex SHA-256 of the serialized container.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
