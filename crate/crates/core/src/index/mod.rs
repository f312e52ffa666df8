//! Vector search over chunk embeddings and the on-disk artifact format.

mod artifact;
mod flat;
mod partitioned;

use thiserror::Error;

pub use artifact::{
    content_digest, decode_artifact, encode_artifact, load_artifact, save_artifact, ArtifactError,
    ARTIFACT_MAGIC, ARTIFACT_VERSION,
};
pub use flat::{FlatIndex, SearchHit};
pub use partitioned::{recall_at_k, PartitionParams, PartitionedIndex};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, query has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate chunk id `{0}`")]
    DuplicateId(String),
    #[error("{clusters} clusters requested but only {entries} entries")]
    TooFewEntries { entries: usize, clusters: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
