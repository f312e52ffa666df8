//! `ingest` and `query`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use agentkit_core::embed::{EmbeddingProvider, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use agentkit_core::index::{load_artifact, save_artifact};
use agentkit_core::ingest::{build_knowledge_base, parse_manifest, ChunkPolicy, DefaultFetcher, Normalizer};
use agentkit_core::KnowledgeBase;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    Hash,
    Remote,
}

impl FromStr for EmbedderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hash" => Ok(Self::Hash),
            "remote" => Ok(Self::Remote),
            _ => Err("expected `hash` or `remote`".into()),
        }
    }
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hash => "hash",
            Self::Remote => "remote",
        })
    }
}

/// The embedder for `kind`. `dim` fixes the hash embedder's dimension; for
/// the remote embedder it is checked against the configured one.
pub fn make_embedder(kind: EmbedderKind, dim: Option<usize>) -> Result<Arc<dyn EmbeddingProvider>, CliError> {
    match kind {
        EmbedderKind::Hash => {
            let e = HashEmbedder::new(dim.unwrap_or(HashEmbedder::DEFAULT_DIM)).map_err(|e| CliError::Failed(e.to_string()))?;
            Ok(Arc::new(e))
        }
        EmbedderKind::Remote => {
            let config = RemoteEmbedderConfig::from_env();
            if let Some(d) = dim {
                if d != config.dim {
                    return Err(CliError::Failed(format!(
                        "knowledge base has dimension {d} but the remote embedder is configured for {}",
                        config.dim
                    )));
                }
            }
            Ok(Arc::new(RemoteEmbedder::new(config).map_err(|e| CliError::Failed(e.to_string()))?))
        }
    }
}

pub struct IngestOptions {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub embedder: EmbedderKind,
    pub dim: usize,
    pub chunk_size: usize,
    pub overlap: usize,
}

pub async fn ingest(opts: IngestOptions) -> Result<(), CliError> {
    let policy = ChunkPolicy::new(opts.chunk_size, opts.overlap).map_err(|e| CliError::Failed(e.to_string()))?;
    let text = std::fs::read_to_string(&opts.manifest).map_err(|e| {
        CliError::Failed(format!(
            "cannot read manifest {}: {e}\nhint: agentkit ingest --manifest PATH --out PATH",
            opts.manifest.display()
        ))
    })?;
    let manifest = parse_manifest(&text).map_err(|e| CliError::Failed(e.to_string()))?;
    for w in &manifest.warnings {
        match w.entry {
            Some(i) => eprintln!("warning: entry {i}: {}", w.message),
            None => eprintln!("warning: {}", w.message),
        }
    }
    let base = opts.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let fetcher = DefaultFetcher::new(base).map_err(|e| CliError::Failed(e.to_string()))?;
    let embedder = make_embedder(opts.embedder, (opts.embedder == EmbedderKind::Hash).then_some(opts.dim))?;
    let kb = build_knowledge_base(&manifest.sources, &fetcher, embedder.as_ref(), &Normalizer::new(), &policy)
        .await
        .map_err(|e| CliError::Failed(e.to_string()))?;
    for f in kb.link_failures() {
        eprintln!("warning: skipped {}: {}", f.link, f.reason);
    }
    let digest = save_artifact(&kb, &opts.out).map_err(|e| CliError::Failed(e.to_string()))?;
    for s in &manifest.sources {
        let n = kb.chunks().iter().filter(|c| c.source_id == s.id).count();
        println!("{}\t{n} chunks", s.id);
    }
    println!("wrote {} ({} chunks, dim {})", opts.out.display(), kb.len(), kb.dim());
    println!("digest {digest}");
    Ok(())
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, CliError> {
    load_artifact(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

/// First `n` characters of `text` on one line.
pub fn preview(text: &str, n: usize) -> String {
    text.chars().take(n).map(|c| if c.is_control() { ' ' } else { c }).collect()
}

pub async fn query(kb_path: &Path, embedder: EmbedderKind, text: &str, k: usize) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let kb = load_kb(kb_path)?;
    if kb.is_empty() {
        return Ok(());
    }
    let embedder = make_embedder(embedder, Some(kb.dim()))?;
    let q = embedder
        .embed(&[text.to_string()])
        .await
        .map_err(|e| CliError::Failed(e.to_string()))?
        .pop()
        .ok_or_else(|| CliError::Failed("embedder returned no vector".into()))?;
    let hits = kb.index().search(&q, k).map_err(|e| CliError::Failed(e.to_string()))?;
    for h in hits {
        let chunk = kb.chunk(&h.chunk_id).expect("hit refers to a stored chunk");
        println!("{}\t{:.6}\t{}\t{}", h.rank + 1, h.score, h.chunk_id, preview(&chunk.text, 80));
    }
    Ok(())
}
