use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::embed::{dot, Embedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f32,
    pub rank: usize,
}

/// Exact index: a linear scan over every stored vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<String>,
    /// Row-major, `ids.len() * dim` values.
    vectors: Vec<f32>,
    id_set: HashSet<String>,
}

/// Descending score, then ascending id.
pub(crate) fn hit_order(a: (f32, &str), b: (f32, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            id_set: HashSet::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        let mut idx = Self::new(dim);
        idx.ids.reserve(n);
        idx.vectors.reserve(n * dim);
        idx
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, chunk_id: impl Into<String>, embedding: &Embedding) -> Result<(), IndexError> {
        self.push_raw(chunk_id, embedding.values())
    }

    pub(crate) fn push_raw(&mut self, chunk_id: impl Into<String>, values: &[f32]) -> Result<(), IndexError> {
        let chunk_id = chunk_id.into();
        if values.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        if !self.id_set.insert(chunk_id.clone()) {
            return Err(IndexError::DuplicateId(chunk_id));
        }
        self.ids.push(chunk_id);
        self.vectors.extend_from_slice(values);
        Ok(())
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub(crate) fn check_query(&self, query: &Embedding, k: usize) -> Result<(), IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        if k == 0 {
            return Err(IndexError::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn score(&self, i: usize, query: &[f32]) -> f32 {
        dot(self.vector(i), query)
    }

    /// Ranks the given rows against `query` and keeps the best `k`.
    pub(crate) fn rank_rows(&self, rows: impl Iterator<Item = usize>, query: &[f32], k: usize) -> Vec<SearchHit> {
        let mut scored: Vec<(f32, usize)> = rows.map(|i| (self.score(i, query), i)).collect();
        let cmp = |a: &(f32, usize), b: &(f32, usize)| hit_order((a.0, &self.ids[a.1]), (b.0, &self.ids[b.1]));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        scored
            .into_iter()
            .enumerate()
            .map(|(rank, (score, i))| SearchHit {
                chunk_id: self.ids[i].clone(),
                score,
                rank,
            })
            .collect()
    }

    /// Top `min(k, len)` entries by cosine similarity.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.check_query(query, k)?;
        Ok(self.rank_rows(0..self.len(), query.values(), k))
    }

    /// Like [`search`](Self::search) but only over rows accepted by `keep`.
    pub fn search_filtered(
        &self,
        query: &Embedding,
        k: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Vec<SearchHit>, IndexError> {
        self.check_query(query, k)?;
        let rows = (0..self.len()).filter(|&i| keep(&self.ids[i]));
        Ok(self.rank_rows(rows, query.values(), k))
    }
}
