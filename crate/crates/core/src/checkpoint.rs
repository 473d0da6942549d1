//! Versioned state files: `LMCK`, a little-endian `u16` version, then JSON.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"LMCK";
pub const VERSION: u16 = 1;
const HEADER: usize = 6;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(#[from] serde_json::Error),
}

pub fn encode<T: Serialize>(state: &T) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::with_capacity(1 << 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    serde_json::to_writer(&mut out, state)?;
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CheckpointError> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let found = u16::from_le_bytes([bytes[4], bytes[5]]);
    if found != VERSION {
        return Err(CheckpointError::Version { found, expected: VERSION });
    }
    Ok(serde_json::from_slice(&bytes[HEADER..])?)
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a truncated checkpoint behind.
pub fn save<T: Serialize>(state: &T, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode(state)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CheckpointError> {
    decode(&std::fs::read(path)?)
}
