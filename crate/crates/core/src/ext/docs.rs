//! Knowledge-base retrieval exposed as one search tool per source.

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::{parse_action, Action, LlmProvider, Message, PromptBundle};
use crate::embed::{embed_batch, EmbedError, EmbeddingProvider};
use crate::index::IndexError;
use crate::kb::KnowledgeBase;
use crate::tools::{ToolDescriptor, ToolError, ToolHandler};

/// Instruction sent with every reformulation request.
pub const REFORMULATION_INSTRUCTION: &str = "Rewrite the user's latest question as a short, self-contained search \
query for a documentation search engine. Resolve pronouns using the conversation. Respond with \
{\"type\": \"final\", \"text\": <query>} and nothing else.";

pub const DEFAULT_CONTEXT_BUDGET: usize = 4000;
pub const DEFAULT_TOP_K: usize = 5;

/// How many prior messages accompany a reformulation request.
const REFORMULATION_HISTORY: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DocsError {
    #[error("the knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub chunk_id: String,
    pub source_id: String,
    pub source_name: String,
    pub url: String,
    pub text: String,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextBlock {
    pub entries: Vec<ContextEntry>,
    pub total_chars: usize,
}

/// Asks the model for a better search query. Returns `raw_query` unchanged
/// when there is no model, the model fails, or the query is empty.
pub async fn reformulate_query(llm: Option<&dyn LlmProvider>, raw_query: &str, recent_history: &[Message]) -> String {
    let Some(llm) = llm else {
        return raw_query.to_string();
    };
    if raw_query.trim().is_empty() {
        return raw_query.to_string();
    }
    let start = recent_history.len().saturating_sub(REFORMULATION_HISTORY);
    let mut messages = recent_history[start..].to_vec();
    messages.push(Message::user(raw_query));
    let bundle = PromptBundle {
        system: REFORMULATION_INSTRUCTION.into(),
        messages,
        tools: Vec::new(),
    };
    match llm.complete(&bundle).await.map(|p| parse_action(&p)) {
        Ok(Ok(Action::FinalAnswer(q))) if !q.trim().is_empty() => q.trim().to_string(),
        _ => raw_query.to_string(),
    }
}

/// Top-`k` chunks packed whole, in rank order, until the next one would
/// exceed `char_budget`. `source` restricts the search to one source.
pub async fn retrieve_context(
    kb: &KnowledgeBase,
    embedder: &dyn EmbeddingProvider,
    query: &str,
    k: usize,
    char_budget: usize,
    source: Option<&str>,
) -> Result<ContextBlock, DocsError> {
    if kb.is_empty() {
        return Err(DocsError::EmptyKnowledgeBase);
    }
    if k == 0 {
        return Err(DocsError::InvalidTopK);
    }
    let q = if query.is_empty() { " " } else { query };
    let vector = embed_batch(embedder, &[q.to_string()]).await?.remove(0);
    let hits = match source {
        Some(src) => kb
            .index()
            .search_filtered(&vector, k, |id| kb.chunk(id).is_some_and(|c| c.source_id == src))?,
        None => kb.index().search(&vector, k)?,
    };
    let mut block = ContextBlock::default();
    for hit in hits {
        let chunk = kb.chunk(&hit.chunk_id).expect("index ids come from the knowledge base");
        let len = chunk.char_len();
        if block.total_chars + len > char_budget {
            break;
        }
        block.total_chars += len;
        block.entries.push(ContextEntry {
            chunk_id: chunk.chunk_id.clone(),
            source_id: chunk.source_id.clone(),
            source_name: kb.source_name(&chunk.source_id).to_string(),
            url: chunk.url.clone(),
            text: chunk.text.clone(),
            score: hit.score,
        });
    }
    Ok(block)
}

pub fn docs_tool_name(source_id: &str) -> String {
    format!("search_{}", source_id.replace('-', "_"))
}

/// Search tool bound to a single knowledge-base source.
pub struct DocsTool {
    kb: Arc<KnowledgeBase>,
    embedder: Arc<dyn EmbeddingProvider>,
    llm: Option<Arc<dyn LlmProvider>>,
    source_id: String,
    char_budget: usize,
}

impl DocsTool {
    pub fn new(kb: Arc<KnowledgeBase>, embedder: Arc<dyn EmbeddingProvider>, source_id: impl Into<String>) -> Self {
        Self {
            kb,
            embedder,
            llm: None,
            source_id: source_id.into(),
            char_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    pub fn with_reformulation(mut self, llm: Arc<dyn LlmProvider>) -> Self {
        self.llm = Some(llm);
        self
    }

    pub fn with_char_budget(mut self, budget: usize) -> Self {
        self.char_budget = budget;
        self
    }

    pub fn descriptor(&self) -> ToolDescriptor {
        let info = self.kb.sources().get(&self.source_id);
        let name = info.map_or(self.source_id.as_str(), |s| s.name.as_str());
        let mut description = format!("Search the {name} documentation and return the most relevant passages.");
        if let Some(d) = info.map(|s| s.description.trim()).filter(|d| !d.is_empty()) {
            description.push(' ');
            description.push_str(d);
        }
        ToolDescriptor::new(
            docs_tool_name(&self.source_id),
            description,
            json!({
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "What to look up"},
                    "top_k": {"type": "integer", "default": DEFAULT_TOP_K, "description": "Number of passages"}
                },
                "required": ["query"]
            }),
        )
    }
}

#[async_trait]
impl ToolHandler for DocsTool {
    async fn call(&self, args: Value) -> Result<Value, ToolError> {
        let raw = args["query"].as_str().unwrap_or_default();
        let k = args["top_k"].as_u64().unwrap_or(DEFAULT_TOP_K as u64) as usize;
        let query = reformulate_query(self.llm.as_deref(), raw, &[]).await;
        let block = retrieve_context(
            &self.kb,
            self.embedder.as_ref(),
            &query,
            k,
            self.char_budget,
            Some(&self.source_id),
        )
        .await
        .map_err(|e| match e {
            DocsError::EmptyKnowledgeBase => ToolError::new("EmptyKnowledgeBase", e.to_string()),
            DocsError::InvalidTopK => ToolError::new("InvalidArgument", e.to_string()),
            other => ToolError::handler(other.to_string()),
        })?;
        Ok(json!({
            "query": query,
            "entries": block.entries,
            "total_chars": block.total_chars,
        }))
    }
}

/// One search tool per source in `kb`.
pub fn docs_tools(
    kb: Arc<KnowledgeBase>,
    embedder: Arc<dyn EmbeddingProvider>,
    llm: Option<Arc<dyn LlmProvider>>,
) -> Vec<(ToolDescriptor, Arc<dyn ToolHandler>)> {
    kb.sources()
        .keys()
        .map(|id| {
            let mut tool = DocsTool::new(kb.clone(), embedder.clone(), id.clone());
            if let Some(llm) = &llm {
                tool = tool.with_reformulation(llm.clone());
            }
            (tool.descriptor(), Arc::new(tool) as Arc<dyn ToolHandler>)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{ScriptStep, ScriptedProvider};
    use crate::embed::{hash_embed, HashEmbedder};
    use crate::ingest::{chunk_document, ChunkPolicy, PlainDocument};

    /// Non-repeating 2500-character text, so each chunk has its own trigrams.
    fn document() -> String {
        let words = ["cell", "nucleus", "model", "zoo", "stain", "image", "deep", "segment", "tissue", "label"];
        let mut state: u64 = 12345;
        let mut text = String::new();
        while text.chars().count() < 2500 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            text.push_str(words[(state >> 33) as usize % words.len()]);
            text.push_str(&format!("{} ", (state >> 40) % 97));
        }
        text.chars().take(2500).collect()
    }

    fn kb() -> KnowledgeBase {
        let doc = PlainDocument {
            source_id: "guide".into(),
            url: "guide.md".into(),
            url_index: 0,
            text: document(),
            fetched_at: chrono::Utc::now(),
        };
        let chunks = chunk_document(&doc, &ChunkPolicy::default());
        let vectors: Vec<_> = chunks.iter().map(|c| hash_embed(&c.text, 256)).collect();
        let mut kb = KnowledgeBase::from_parts(256, chunks, &vectors).unwrap();
        kb.describe_source("guide", "User Guide", "How to use things.");
        kb
    }

    #[tokio::test]
    async fn query_equal_to_chunk_text_ranks_it_first() {
        let kb = kb();
        assert_eq!(kb.len(), 3);
        let embedder = HashEmbedder::new(256).unwrap();
        for target in kb.chunks() {
            // Independent ranking: cosine against every stored vector.
            let q = hash_embed(&target.text, 256);
            let mut scored: Vec<(f32, &str)> = kb
                .chunks()
                .iter()
                .map(|c| {
                    let v = kb.vector(&c.chunk_id).unwrap();
                    (v.iter().zip(q.values()).map(|(a, b)| a * b).sum(), c.chunk_id.as_str())
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            assert_eq!(scored[0].1, target.chunk_id);

            let block = retrieve_context(&kb, &embedder, &target.text, 3, 10_000, None).await.unwrap();
            assert_eq!(block.entries[0].chunk_id, target.chunk_id);
            assert!((block.entries[0].score - 1.0).abs() < 1e-5);
        }
        let block = retrieve_context(&kb, &embedder, &kb.chunks()[2].text, 1, 10_000, None)
            .await
            .unwrap();
        assert_eq!(block.entries[0].chunk_id, "guide:0:2");
    }

    #[tokio::test]
    async fn whole_chunk_packing() {
        let kb = kb();
        let embedder = HashEmbedder::new(256).unwrap();
        let all = retrieve_context(&kb, &embedder, "cell model", 3, 100_000, None).await.unwrap();
        assert_eq!(all.entries.len(), 3);
        assert_eq!(all.total_chars, all.entries.iter().map(|e| e.text.chars().count()).sum::<usize>());
        assert!(all.entries.windows(2).all(|w| w[0].score >= w[1].score));
        let none = retrieve_context(&kb, &embedder, "cell model", 3, 10, None).await.unwrap();
        assert!(none.entries.is_empty());
        assert_eq!(none.total_chars, 0);
        let one = retrieve_context(&kb, &embedder, "cell model", 3, 1500, None).await.unwrap();
        assert_eq!(one.entries.len(), 1);
        for e in &all.entries {
            assert_eq!(kb.chunk(&e.chunk_id).unwrap().text, e.text);
            assert_eq!(e.source_name, "User Guide");
        }
    }

    #[tokio::test]
    async fn empty_kb_and_bad_k() {
        let embedder = HashEmbedder::new(256).unwrap();
        let empty = KnowledgeBase::empty(256);
        assert_eq!(
            retrieve_context(&empty, &embedder, "x", 1, 100, None).await,
            Err(DocsError::EmptyKnowledgeBase)
        );
        assert_eq!(
            retrieve_context(&kb(), &embedder, "x", 0, 100, None).await,
            Err(DocsError::InvalidTopK)
        );
    }

    #[tokio::test]
    async fn reformulation_fallbacks() {
        assert_eq!(
            reformulate_query(None, "how to cite the model zoo", &[]).await,
            "how to cite the model zoo"
        );
        let llm = ScriptedProvider::new([Action::final_answer("bioimage model zoo citation")]);
        assert_eq!(
            reformulate_query(Some(&llm), "how to cite the model zoo", &[]).await,
            "bioimage model zoo citation"
        );
        assert_eq!(reformulate_query(Some(&llm), "", &[]).await, "");
        assert_eq!(llm.call_count(), 1);
        let down = ScriptedProvider::new([ScriptStep::Fail("down".into())]);
        assert_eq!(reformulate_query(Some(&down), "q", &[]).await, "q");
    }

    #[tokio::test]
    async fn tool_returns_attributed_entries() {
        let kb = Arc::new(kb());
        let tools = docs_tools(kb.clone(), Arc::new(HashEmbedder::new(256).unwrap()), None);
        assert_eq!(tools.len(), 1);
        let (desc, handler) = &tools[0];
        assert_eq!(desc.name, "search_guide");
        assert!(desc.description.contains("User Guide"));
        let out = handler
            .call(json!({"query": kb.chunks()[1].text, "top_k": 2}))
            .await
            .unwrap();
        assert_eq!(out["entries"][0]["chunk_id"], "guide:0:1");
        assert_eq!(out["entries"][0]["source_id"], "guide");
        assert_eq!(docs_tool_name("bioimage-io"), "search_bioimage_io");
    }
}
