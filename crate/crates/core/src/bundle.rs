//! Versioned, checksummed binary model bundles.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, SHA-256 of the
//! payload, little-endian `u64` payload length, then the bincode payload.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::Engine;

pub const MAGIC: &[u8; 8] = b"TDBUNDLE";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 32 + 8;

pub fn encode(engine: &Engine) -> Result<Vec<u8>> {
    let payload = bincode::serialize(engine).map_err(|e| Error::CorruptBundle(format!("encode: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Engine> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptBundle("not a model bundle".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptBundle("truncated header".into()));
    }
    let digest = &bytes[12..44];
    let len = u64::from_le_bytes(bytes[44..52].try_into().expect("8 bytes"));
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(Error::CorruptBundle(format!("payload is {} bytes, header says {len}", payload.len())));
    }
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::CorruptBundle("checksum mismatch".into()));
    }
    let engine: Engine = bincode::deserialize(payload).map_err(|e| Error::CorruptBundle(format!("decode: {e}")))?;
    engine.router.classifier.validate()?;
    if engine.router.vocabulary.len() != engine.router.classifier.n_features() {
        return Err(Error::ShapeMismatch("vocabulary and model disagree on feature count".into()));
    }
    Ok(engine)
}

pub fn save(engine: &Engine, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(engine)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Engine> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
