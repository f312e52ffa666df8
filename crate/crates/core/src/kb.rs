use std::collections::{BTreeMap, HashMap};

use crate::embed::Embedding;
use crate::index::{FlatIndex, IndexError};
use crate::ingest::{Chunk, FetchError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceInfo {
    pub name: String,
    pub description: String,
    pub chunk_count: usize,
}

/// Chunks, their vectors and per-source bookkeeping. Immutable once built.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    chunks: Vec<Chunk>,
    positions: HashMap<String, usize>,
    index: FlatIndex,
    sources: BTreeMap<String, SourceInfo>,
    manifest_digest: Option<String>,
    embedder: Option<String>,
    link_failures: Vec<FetchError>,
}

impl KnowledgeBase {
    pub fn empty(dim: usize) -> Self {
        Self {
            chunks: Vec::new(),
            positions: HashMap::new(),
            index: FlatIndex::new(dim),
            sources: BTreeMap::new(),
            manifest_digest: None,
            embedder: None,
            link_failures: Vec::new(),
        }
    }

    /// Pairs chunks with vectors (same order). Source names default to ids.
    pub fn from_parts(dim: usize, chunks: Vec<Chunk>, vectors: &[Embedding]) -> Result<Self, IndexError> {
        let raw: Vec<f32> = vectors.iter().flat_map(|e| e.values().iter().copied()).collect();
        if vectors.len() != chunks.len() {
            return Err(IndexError::InvalidArgument(format!(
                "{} chunks but {} vectors",
                chunks.len(),
                vectors.len()
            )));
        }
        if let Some(bad) = vectors.iter().find(|e| e.dim() != dim) {
            return Err(IndexError::DimensionMismatch { expected: dim, found: bad.dim() });
        }
        Self::from_raw(dim, chunks, &raw)
    }

    pub(crate) fn from_raw(dim: usize, chunks: Vec<Chunk>, raw: &[f32]) -> Result<Self, IndexError> {
        let mut kb = Self::empty(dim);
        kb.index = FlatIndex::with_capacity(dim, chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            kb.index.push_raw(chunk.chunk_id.clone(), &raw[i * dim..(i + 1) * dim])?;
            kb.positions.insert(chunk.chunk_id.clone(), i);
            kb.sources
                .entry(chunk.source_id.clone())
                .or_insert_with(|| SourceInfo {
                    name: chunk.source_id.clone(),
                    description: String::new(),
                    chunk_count: 0,
                })
                .chunk_count += 1;
        }
        kb.chunks = chunks;
        Ok(kb)
    }

    /// Attaches display metadata for a source, creating it if it has no chunks.
    pub fn describe_source(&mut self, id: &str, name: &str, description: &str) {
        let info = self.sources.entry(id.to_string()).or_insert_with(|| SourceInfo {
            name: String::new(),
            description: String::new(),
            chunk_count: 0,
        });
        info.name = name.to_string();
        info.description = description.to_string();
    }

    pub(crate) fn set_build_info(&mut self, manifest_digest: String, embedder: String, failures: Vec<FetchError>) {
        self.manifest_digest = Some(manifest_digest);
        self.embedder = Some(embedder);
        self.link_failures = failures;
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.positions.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn vector(&self, chunk_id: &str) -> Option<&[f32]> {
        self.positions.get(chunk_id).map(|&i| self.index.vector(i))
    }

    pub fn index(&self) -> &FlatIndex {
        &self.index
    }

    pub fn sources(&self) -> &BTreeMap<String, SourceInfo> {
        &self.sources
    }

    pub fn source_name<'a>(&'a self, source_id: &'a str) -> &'a str {
        self.sources.get(source_id).map_or(source_id, |s| s.name.as_str())
    }

    /// SHA-256 of the canonical manifest entries, when built from a manifest.
    pub fn manifest_digest(&self) -> Option<&str> {
        self.manifest_digest.as_deref()
    }

    pub fn embedder_name(&self) -> Option<&str> {
        self.embedder.as_deref()
    }

    /// Links that failed during a build that nonetheless succeeded.
    pub fn link_failures(&self) -> &[FetchError] {
        &self.link_failures
    }
}
