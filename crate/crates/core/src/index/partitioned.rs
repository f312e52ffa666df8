//! Inverted-file index: k-means partitions with per-cluster posting lists.
//!
//! Clustering uses squared Euclidean distance with `f64` centroids. Queries
//! probe the `n_probe` centroids closest to the query (equivalently, the
//! highest `q·c - |c|²/2`) and rank the union of their postings exactly as
//! the flat index would.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FlatIndex, IndexError, SearchHit};
use crate::embed::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionParams {
    pub n_clusters: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            n_clusters: 64,
            max_iters: 25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PartitionedIndex {
    flat: FlatIndex,
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    postings: Vec<Vec<usize>>,
    /// Total squared distance after each assignment step.
    distortion_history: Vec<f64>,
    converged: bool,
}

fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = f64::from(x) - y;
            d * d
        })
        .sum()
}

fn nearest(v: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(v, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn seed_centroids(flat: &FlatIndex, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = flat.len();
    let to_f64 = |i: usize| flat.vector(i).iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
    let mut centroids = vec![to_f64(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(flat.vector(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // all points coincide with a centre; fall back to uniform
            rng.random_range(0..n)
        };
        let c = to_f64(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(flat.vector(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

impl PartitionedIndex {
    /// Runs Lloyd iterations until the assignment stops changing or
    /// `max_iters` is reached. Deterministic for a given seed.
    pub fn build(flat: &FlatIndex, params: PartitionParams) -> Result<Self, IndexError> {
        let n = flat.len();
        let k = params.n_clusters;
        if k == 0 {
            return Err(IndexError::InvalidArgument("n_clusters must be at least 1".into()));
        }
        if k > n {
            return Err(IndexError::TooFewEntries { entries: n, clusters: k });
        }
        let dim = flat.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut centroids = seed_centroids(flat, k, &mut rng);
        let mut assignment = vec![usize::MAX; n];
        let mut history = Vec::new();
        let mut converged = false;

        for _ in 0..params.max_iters.max(1) {
            let mut changed = false;
            let mut distortion = 0.0;
            let mut dists = vec![0.0; n];
            for i in 0..n {
                let (j, d) = nearest(flat.vector(i), &centroids);
                if assignment[i] != j {
                    assignment[i] = j;
                    changed = true;
                }
                dists[i] = d;
                distortion += d;
            }
            history.push(distortion);
            if !changed {
                converged = true;
                break;
            }

            let mut sums = vec![vec![0.0f64; dim]; k];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                let c = assignment[i];
                counts[c] += 1;
                for (s, &x) in sums[c].iter_mut().zip(flat.vector(i)) {
                    *s += f64::from(x);
                }
            }
            for j in 0..k {
                if counts[j] > 0 {
                    let inv = 1.0 / counts[j] as f64;
                    centroids[j] = sums[j].iter().map(|s| s * inv).collect();
                }
            }
            // Re-seed empty clusters from the points farthest from their
            // (updated) centres; each such point then has distance zero.
            let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
            if !empty.is_empty() {
                let mut far: Vec<(f64, usize)> = (0..n)
                    .map(|i| (sq_dist(flat.vector(i), &centroids[assignment[i]]), i))
                    .collect();
                far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                for (j, &(_, i)) in empty.iter().zip(&far) {
                    centroids[*j] = flat.vector(i).iter().map(|&x| f64::from(x)).collect();
                }
            }
        }

        let mut postings = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            postings[c].push(i);
        }
        Ok(Self {
            flat: flat.clone(),
            centroids,
            assignment,
            postings,
            distortion_history: history,
            converged,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn flat(&self) -> &FlatIndex {
        &self.flat
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn postings(&self) -> &[Vec<usize>] {
        &self.postings
    }

    pub fn distortion_history(&self) -> &[f64] {
        &self.distortion_history
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Clusters ordered by distance from `query`, nearest first.
    fn probe_order(&self, query: &[f32]) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(j, c)| (sq_dist(query, c), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, j)| j).collect()
    }

    pub fn search(&self, query: &Embedding, k: usize, n_probe: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.flat.check_query(query, k)?;
        if n_probe == 0 || n_probe > self.n_clusters() {
            return Err(IndexError::InvalidArgument(format!(
                "n_probe must be in 1..={}, got {n_probe}",
                self.n_clusters()
            )));
        }
        let probes = self.probe_order(query.values());
        let rows = probes[..n_probe]
            .iter()
            .flat_map(|&c| self.postings[c].iter().copied());
        Ok(self.flat.rank_rows(rows, query.values(), k))
    }
}

/// Fraction of the exact top-k ids that also appear in `approx`.
pub fn recall_at_k(exact: &[SearchHit], approx: &[SearchHit]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let found = exact
        .iter()
        .filter(|h| approx.iter().any(|a| a.chunk_id == h.chunk_id))
        .count();
    found as f64 / exact.len() as f64
}
