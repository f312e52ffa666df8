use serde::{Deserialize, Serialize};

use super::{IngestError, PlainDocument};

/// Character window sizes for splitting documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPolicy {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            chunk_size: 1000,
            overlap: 200,
        }
    }
}

impl ChunkPolicy {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, IngestError> {
        let policy = Self { chunk_size, overlap };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(IngestError::InvalidPolicy {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

/// A contiguous character window of a document. Field order here is the
/// record layout of the knowledge-base artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub source_id: String,
    pub url: String,
    /// Offset in characters (not bytes) into the document text.
    pub offset: usize,
    pub text: String,
}

impl Chunk {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// `[start, end)` character spans for a document of `len` characters.
///
/// Chunk `k` starts at `k * stride`; emission stops after the first chunk
/// that reaches the end.
pub fn chunk_spans(len: usize, policy: &ChunkPolicy) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    if len == 0 {
        return spans;
    }
    let stride = policy.stride();
    let mut start = 0;
    loop {
        let end = (start + policy.chunk_size).min(len);
        spans.push((start, end));
        if end == len {
            return spans;
        }
        start += stride;
    }
}

pub fn chunk_document(doc: &PlainDocument, policy: &ChunkPolicy) -> Vec<Chunk> {
    // byte offset of every char boundary, including the end
    let mut bounds: Vec<usize> = doc.text.char_indices().map(|(i, _)| i).collect();
    bounds.push(doc.text.len());
    let len = bounds.len() - 1;
    chunk_spans(len, policy)
        .into_iter()
        .enumerate()
        .map(|(ordinal, (start, end))| Chunk {
            chunk_id: format!("{}:{}:{}", doc.source_id, doc.url_index, ordinal),
            source_id: doc.source_id.clone(),
            url: doc.url.clone(),
            offset: start,
            text: doc.text[bounds[start]..bounds[end]].to_string(),
        })
        .collect()
}
