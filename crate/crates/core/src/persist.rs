//! Versioned binary envelopes for checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, `u64` payload
//! length, `u64` FNV-1a checksum of the payload, then the bincode payload.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const HEADER_LEN: usize = 8 + 4 + 8 + 8;

fn checksum(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn encode<T: Serialize>(magic: &[u8; 8], version: u32, value: &T) -> Result<Vec<u8>> {
    let payload = bincode::serialize(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(magic: &[u8; 8], version: u32, bytes: &[u8]) -> Result<T> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[..8] != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic: expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::VersionMismatch {
            expected: version,
            found,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let sum = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(Error::Checkpoint(format!(
            "truncated payload: expected {len} bytes, found {}",
            payload.len()
        )));
    }
    if checksum(payload) != sum {
        return Err(Error::Checkpoint("payload checksum mismatch".into()));
    }
    bincode::deserialize(payload).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save<T: Serialize>(path: &Path, magic: &[u8; 8], version: u32, value: &T) -> Result<()> {
    let bytes = encode(magic, version, value)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path, magic: &[u8; 8], version: u32) -> Result<T> {
    let bytes = std::fs::read(path)?;
    decode(magic, version, &bytes)
}
