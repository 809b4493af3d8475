//! Versioned binary checkpoints.
//!
//! Layout: `AUXMIXCK` magic, `u32` version, `u32` header length, JSON header,
//! then `num_params` little-endian scalars for theta followed by the same
//! count for the EMA shadow.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::ImageShape;
use crate::model::{EncoderSpec, Network};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"AUXMIXCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Rotation pretext model with a 4-way head.
    Pretext,
    /// Target classifier trained on the labeled classes.
    Target,
}

/// Seed and position of the counter-based random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: EncoderSpec,
    pub input: ImageShape,
    pub head_width: usize,
    pub dtype: String,
    pub phase: Phase,
    pub config_hash: String,
    pub scenario_hash: String,
    pub rng: RngState,
    pub num_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub params: Vec<T>,
    pub ema: Vec<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn network(&self) -> Result<Network> {
        let net = Network::new(self.header.arch.clone(), self.header.input, self.header.head_width)?;
        if net.num_params() != self.header.num_params || self.params.len() != self.header.num_params {
            return Err(Error::CheckpointMismatch(format!(
                "architecture `{}` needs {} parameters, checkpoint holds {}",
                self.header.arch.arch,
                net.num_params(),
                self.params.len()
            )));
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let width = std::mem::size_of::<T>();
        let mut out = Vec::with_capacity(16 + header.len() + 2 * self.params.len() * width);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for &p in self.params.iter().chain(&self.ema) {
            p.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::corrupt(origin, "not an auxmix checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { kind: "checkpoint", found: version, expected: CHECKPOINT_VERSION });
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| Error::corrupt(origin, "truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| Error::corrupt(origin, format!("bad header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(Error::CheckpointMismatch(format!("checkpoint dtype {} but {} requested", header.dtype, T::DTYPE)));
        }
        let width = std::mem::size_of::<T>();
        let data = &bytes[16 + hlen..];
        if data.len() != 2 * header.num_params * width {
            return Err(Error::corrupt(origin, "parameter payload has the wrong length"));
        }
        let values: Vec<T> = data.chunks_exact(width).map(T::read_le).collect();
        let (params, ema) = values.split_at(header.num_params);
        Ok(Self { header, params: params.to_vec(), ema: ema.to_vec() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a value's canonical JSON encoding.
pub fn json_hash<S: Serialize>(value: &S) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}
