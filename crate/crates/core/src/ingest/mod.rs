//! Manifest parsing, document normalization, chunking and knowledge-base
//! builds.

mod chunk;
mod fetch;
mod manifest;
mod normalize;

use futures::stream::{self, StreamExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use chunk::{chunk_document, chunk_spans, Chunk, ChunkPolicy};
pub use fetch::{DefaultFetcher, FetchError, Fetcher, FsFetcher, HttpFetcher};
pub use manifest::{is_valid_source_id, parse_manifest, DocumentFormat, DocumentSource, Manifest, ManifestWarning};
pub use normalize::{Normalizer, PdfExtractor, PlainDocument};

use crate::embed::{embed_batch, EmbedError, Embedding, EmbeddingProvider};
use crate::kb::KnowledgeBase;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum IngestError {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("duplicate source id `{0}`")]
    DuplicateSourceId(String),
    #[error("collection entry {entry} is missing `{field}`")]
    MissingField { entry: usize, field: &'static str },
    #[error("collection entry {entry} has an invalid `{field}`: {reason}")]
    InvalidField {
        entry: usize,
        field: &'static str,
        reason: String,
    },
    #[error("unsupported document format `{0}`")]
    UnsupportedFormat(String),
    #[error("could not decode document: {0}")]
    DecodeError(String),
    #[error("no PDF extractor configured")]
    PdfExtractorUnavailable,
    #[error("invalid chunk policy: overlap {overlap} must be smaller than chunk size {chunk_size}")]
    InvalidPolicy { chunk_size: usize, overlap: usize },
    #[error("source `{source_id}` produced no documents ({} failed links)", failures.len())]
    Fetch {
        source_id: String,
        failures: Vec<FetchError>,
    },
    #[error("embedding failed: {0}")]
    Embedding(#[from] EmbedError),
    #[error("index error: {0}")]
    Index(String),
}

/// How many sources are fetched and embedded at once.
const SOURCE_CONCURRENCY: usize = 4;

struct SourceOutput {
    chunks: Vec<Chunk>,
    vectors: Vec<Embedding>,
    failures: Vec<FetchError>,
}

async fn ingest_source(
    source: &DocumentSource,
    fetcher: &dyn Fetcher,
    embedder: &dyn EmbeddingProvider,
    normalizer: &Normalizer,
    policy: &ChunkPolicy,
) -> Result<SourceOutput, IngestError> {
    let mut failures = Vec::new();
    let mut docs = Vec::new();
    for (url_index, link) in source.links.iter().enumerate() {
        let raw = match fetcher.fetch(link).await {
            Ok(raw) => raw,
            Err(e) => {
                tracing::warn!(source = %source.id, %e, "fetch failed");
                failures.push(e);
                continue;
            }
        };
        match normalizer.normalize(&source.id, link, url_index, &raw, source.format) {
            Ok(doc) => docs.push(doc),
            Err(e) => {
                tracing::warn!(source = %source.id, link = %link, %e, "normalization failed");
                failures.push(FetchError::new(link.clone(), e.to_string()));
            }
        }
    }
    if docs.is_empty() {
        return Err(IngestError::Fetch {
            source_id: source.id.clone(),
            failures,
        });
    }
    let chunks: Vec<Chunk> = docs.iter().flat_map(|d| chunk_document(d, policy)).collect();
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embed_batch(embedder, &texts).await?;
    Ok(SourceOutput {
        chunks,
        vectors,
        failures,
    })
}

/// Digest over the canonical JSON form of the manifest entries.
pub fn manifest_digest(sources: &[DocumentSource]) -> String {
    let canonical = serde_json::to_vec(sources).expect("sources serialize");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}

/// Fetches, normalizes, chunks and embeds every source.
///
/// A link that fails is recorded and skipped; the build only fails when a
/// source ends up with no documents at all. Output order follows manifest
/// order regardless of fetch timing.
pub async fn build_knowledge_base(
    sources: &[DocumentSource],
    fetcher: &dyn Fetcher,
    embedder: &dyn EmbeddingProvider,
    normalizer: &Normalizer,
    policy: &ChunkPolicy,
) -> Result<KnowledgeBase, IngestError> {
    policy.validate()?;
    let outputs: Vec<Result<SourceOutput, IngestError>> = stream::iter(sources)
        .map(|s| ingest_source(s, fetcher, embedder, normalizer, policy))
        .buffered(SOURCE_CONCURRENCY)
        .collect()
        .await;

    let mut chunks = Vec::new();
    let mut vectors = Vec::new();
    let mut failures = Vec::new();
    for out in outputs {
        let out = out?;
        chunks.extend(out.chunks);
        vectors.extend(out.vectors);
        failures.extend(out.failures);
    }
    let mut kb = KnowledgeBase::from_parts(embedder.dim(), chunks, &vectors)
        .map_err(|e| IngestError::Index(e.to_string()))?;
    for s in sources {
        kb.describe_source(&s.id, &s.name, &s.description);
    }
    kb.set_build_info(manifest_digest(sources), embedder.name().to_string(), failures);
    Ok(kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::index::content_digest;

    fn source(id: &str, links: &[&str]) -> DocumentSource {
        DocumentSource {
            id: id.into(),
            name: id.to_uppercase(),
            description: String::new(),
            links: links.iter().map(|s| s.to_string()).collect(),
            format: DocumentFormat::Markdown,
        }
    }

    #[tokio::test]
    async fn builds_three_chunks_from_2500_chars() {
        let dir = tempfile::tempdir().unwrap();
        let text: String = (0..2500).map(|i| (b'a' + (i % 26) as u8) as char).collect();
        std::fs::write(dir.path().join("doc.md"), &text).unwrap();
        let kb = build_knowledge_base(
            &[source("one", &["doc.md"])],
            &FsFetcher::new(dir.path()),
            &HashEmbedder::new(64).unwrap(),
            &Normalizer::new(),
            &ChunkPolicy::default(),
        )
        .await
        .unwrap();
        assert_eq!(kb.len(), 3);
        assert_eq!(kb.index().len(), 3);
        assert_eq!(kb.sources()["one"].chunk_count, 3);
        assert_eq!(kb.source_name("one"), "ONE");
        assert_eq!(kb.dim(), 64);
        assert!(kb.manifest_digest().is_some());
    }

    #[tokio::test]
    async fn empty_sources_give_empty_kb() {
        let kb = build_knowledge_base(
            &[],
            &FsFetcher::new("."),
            &HashEmbedder::new(16).unwrap(),
            &Normalizer::new(),
            &ChunkPolicy::default(),
        )
        .await
        .unwrap();
        assert!(kb.is_empty());
    }

    #[tokio::test]
    async fn failing_source_is_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ok.md"), "fine").unwrap();
        let err = build_knowledge_base(
            &[source("good", &["ok.md"]), source("bad", &["nope.md", "nada.md"])],
            &FsFetcher::new(dir.path()),
            &HashEmbedder::new(16).unwrap(),
            &Normalizer::new(),
            &ChunkPolicy::default(),
        )
        .await
        .unwrap_err();
        match err {
            IngestError::Fetch { source_id, failures } => {
                assert_eq!(source_id, "bad");
                assert_eq!(failures.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn partial_failures_are_recorded_and_build_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ok.md"), "some text ".repeat(300)).unwrap();
        let sources = [source("mixed", &["ok.md", "missing.md"])];
        let build = || async {
            build_knowledge_base(
                &sources,
                &FsFetcher::new(dir.path()),
                &HashEmbedder::new(32).unwrap(),
                &Normalizer::new(),
                &ChunkPolicy::default(),
            )
            .await
            .unwrap()
        };
        let a = build().await;
        let b = build().await;
        assert_eq!(a.link_failures().len(), 1);
        assert_eq!(content_digest(&a), content_digest(&b));
    }
}
