//! Core of agentkit: knowledge-base ingestion and vector search, the tool
//! registry, the ReAct agent loop and the built-in extensions.

pub mod agent;
pub mod embed;
pub mod ext;
pub mod html;
pub mod index;
pub mod ingest;
pub mod kb;
pub mod tools;
pub mod wire;

pub use embed::{cosine_similarity, hash_embed, Embedding, EmbeddingProvider, HashEmbedder};
pub use kb::KnowledgeBase;
