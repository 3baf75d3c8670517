//! Little-endian binary formats: the per-slide embedding store (`PCM1`) and
//! the parameter checkpoint (`PCMW`).
//!
//! ```text
//! PCM1: "PCM1" u32 D u32 N  then N x (u32 row, u32 col, D x f32)
//! PCMW: "PCMW" u32 D u32 A  then V (A*D), U (A*D), w (A), W_c (D), b  as f64
//! ```

use std::path::Path;

use pcmil_core::embeddings::EmbeddingStore;
use pcmil_core::model::AbmilParams;
use pcmil_core::Patch;

use crate::error::{CliError, Result};
use crate::io::{read_bytes, write_file};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"PCM1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCMW";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("file holds {found} bytes but its header implies {expected}")]
    SizeMismatch { expected: u64, found: u64 },
    #[error("embedding dimension is zero")]
    ZeroDimension,
    #[error("patch ({row}, {col}) appears twice")]
    DuplicatePatch { row: u32, col: u32 },
    #[error("{0}")]
    Invalid(String),
}

fn header(bytes: &[u8], magic: &[u8; 4]) -> std::result::Result<(u32, u32), FormatError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != magic {
        return Err(FormatError::BadMagic { expected: *magic, found: bytes[..bytes.len().min(4)].to_vec() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    Ok((word(4), word(8)))
}

fn check_size(bytes: &[u8], expected: u64) -> std::result::Result<(), FormatError> {
    if bytes.len() as u64 != expected {
        return Err(FormatError::SizeMismatch { expected, found: bytes.len() as u64 });
    }
    Ok(())
}

pub fn encode_embeddings(store: &EmbeddingStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + store.len() * (8 + 4 * store.dim()));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (p, values) in store.iter() {
        out.extend_from_slice(&p.row.to_le_bytes());
        out.extend_from_slice(&p.col.to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> std::result::Result<EmbeddingStore, FormatError> {
    let (d, n) = header(bytes, EMBEDDING_MAGIC)?;
    if d == 0 {
        return Err(FormatError::ZeroDimension);
    }
    let record = 8 + 4 * u64::from(d);
    check_size(bytes, HEADER_LEN as u64 + u64::from(n) * record)?;
    let mut store = EmbeddingStore::new(d as usize);
    let mut values = vec![0f32; d as usize];
    for chunk in bytes[HEADER_LEN..].chunks_exact(record as usize) {
        let row = u32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let col = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
        for (v, b) in values.iter_mut().zip(chunk[8..].chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
        let before = store.len();
        store.insert(Patch::new(row, col), &values).map_err(|e| FormatError::Invalid(e.to_string()))?;
        if store.len() == before {
            return Err(FormatError::DuplicatePatch { row, col });
        }
    }
    Ok(store)
}

pub fn encode_params(params: &AbmilParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.as_flat().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(params.attn_dim() as u32).to_le_bytes());
    for v in params.as_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<AbmilParams, FormatError> {
    let (d, a) = header(bytes, CHECKPOINT_MAGIC)?;
    if d == 0 || a == 0 {
        return Err(FormatError::ZeroDimension);
    }
    let len = AbmilParams::len_for(d as usize, a as usize);
    check_size(bytes, HEADER_LEN as u64 + 8 * len as u64)?;
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    AbmilParams::from_flat(d as usize, a as usize, data).map_err(|e| FormatError::Invalid(e.to_string()))
}

fn data_error(path: &Path, err: FormatError) -> CliError {
    CliError::Data(format!("{}: {err}", path.display()))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingStore> {
    decode_embeddings(&read_bytes(path)?).map_err(|e| data_error(path, e))
}

pub fn write_embeddings(path: &Path, store: &EmbeddingStore) -> Result<()> {
    write_file(path, encode_embeddings(store))
}

pub fn read_checkpoint(path: &Path) -> Result<AbmilParams> {
    decode_params(&read_bytes(path)?).map_err(|e| data_error(path, e))
}

pub fn write_checkpoint(path: &Path, params: &AbmilParams) -> Result<()> {
    write_file(path, encode_params(params))
}
