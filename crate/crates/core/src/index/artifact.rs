//! Portable knowledge-base artifact.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "BIKB" | u32 version=1 | u32 dim | u64 n_chunks | u64 metadata_len
//! metadata: n_chunks JSON lines {chunk_id, source_id, url, offset, text}
//! vectors:  n_chunks * dim f32
//! SHA-256 of every preceding byte (32 bytes)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::Chunk;
use crate::kb::KnowledgeBase;

pub const ARTIFACT_MAGIC: &[u8; 4] = b"BIKB";
pub const ARTIFACT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArtifactError {
    #[error("bad magic: not a knowledge-base artifact")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated artifact: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("artifact digest mismatch")]
    DigestMismatch,
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub fn encode_artifact(kb: &KnowledgeBase) -> Vec<u8> {
    let mut metadata = Vec::new();
    for chunk in kb.chunks() {
        serde_json::to_writer(&mut metadata, chunk).expect("chunk serializes");
        metadata.push(b'\n');
    }
    let vectors = kb.index().raw_vectors();
    let mut out = Vec::with_capacity(HEADER_LEN + metadata.len() + vectors.len() * 4 + DIGEST_LEN);
    out.extend_from_slice(ARTIFACT_MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    out.extend_from_slice(&(kb.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(kb.len() as u64).to_le_bytes());
    out.extend_from_slice(&(metadata.len() as u64).to_le_bytes());
    out.extend_from_slice(&metadata);
    for v in vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Hex SHA-256 trailer of the encoded artifact; identifies KB content.
pub fn content_digest(kb: &KnowledgeBase) -> String {
    let bytes = encode_artifact(kb);
    hex_string(&bytes[bytes.len() - DIGEST_LEN..])
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode_artifact(bytes: &[u8]) -> Result<KnowledgeBase, ArtifactError> {
    let found = bytes.len() as u64;
    if bytes.len() < 4 {
        return Err(if ARTIFACT_MAGIC.starts_with(bytes) {
            ArtifactError::TruncatedFile { expected: HEADER_LEN as u64, found }
        } else {
            ArtifactError::BadMagic
        });
    }
    if &bytes[..4] != ARTIFACT_MAGIC {
        return Err(ArtifactError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(ArtifactError::TruncatedFile { expected: HEADER_LEN as u64, found });
    }
    let version = read_u32(bytes, 4);
    if version != ARTIFACT_VERSION {
        return Err(ArtifactError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ArtifactError::TruncatedFile { expected: HEADER_LEN as u64, found });
    }
    let dim = read_u32(bytes, 8) as u64;
    let n_chunks = read_u64(bytes, 12);
    let metadata_len = read_u64(bytes, 20);

    if dim == 0 {
        return Err(ArtifactError::Corrupt("zero dimension".into()));
    }
    let expected = n_chunks
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(metadata_len))
        .and_then(|v| v.checked_add((HEADER_LEN + DIGEST_LEN) as u64))
        .ok_or_else(|| ArtifactError::Corrupt("section lengths overflow".into()))?;
    if found < expected {
        return Err(ArtifactError::TruncatedFile { expected, found });
    }
    if found > expected {
        return Err(ArtifactError::Corrupt(format!("{} trailing bytes", found - expected)));
    }
    let body_len = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body_len]).as_slice() != &bytes[body_len..] {
        return Err(ArtifactError::DigestMismatch);
    }
    let meta_end = HEADER_LEN + metadata_len as usize;
    let metadata = std::str::from_utf8(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| ArtifactError::Corrupt(format!("metadata is not UTF-8: {e}")))?;
    let mut chunks = Vec::with_capacity(n_chunks.min(metadata_len) as usize);
    if !metadata.is_empty() {
        let body = metadata
            .strip_suffix('\n')
            .ok_or_else(|| ArtifactError::Corrupt("metadata must end with a newline".into()))?;
        for (i, line) in body.split('\n').enumerate() {
            let chunk: Chunk = serde_json::from_str(line)
                .map_err(|e| ArtifactError::Corrupt(format!("metadata record {i}: {e}")))?;
            chunks.push(chunk);
        }
    }
    if chunks.len() as u64 != n_chunks {
        return Err(ArtifactError::Corrupt(format!(
            "header says {n_chunks} chunks, metadata has {}",
            chunks.len()
        )));
    }
    let raw: Vec<f32> = bytes[meta_end..body_len]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    KnowledgeBase::from_raw(dim as usize, chunks, &raw).map_err(|e| ArtifactError::Corrupt(e.to_string()))
}

pub fn save_artifact(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<String, ArtifactError> {
    let bytes = encode_artifact(kb);
    std::fs::write(path.as_ref(), &bytes).map_err(|e| ArtifactError::Io(e.to_string()))?;
    Ok(hex_string(&bytes[bytes.len() - DIGEST_LEN..]))
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<KnowledgeBase, ArtifactError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| ArtifactError::Io(e.to_string()))?;
    decode_artifact(&bytes)
}
