//! Batch utility scoring of ordered chunk combinations.
//!
//! A [`UtilityScorer`] is the black-box value function the search optimizes.
//! It sees a whole batch of combinations at once, mirroring a reranker that
//! evaluates many candidates per call; every output must depend only on its
//! own combination.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{cosine, Chunk, Query};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("unknown chunk id {0:?}")]
    UnknownChunk(String),
    #[error("duplicate candidate id {0:?}")]
    DuplicateCandidate(String),
    #[error("combination repeats chunk id {0:?}")]
    RepeatedChunk(String),
    #[error("unknown scorer {0:?} (expected additive, coverage or order)")]
    UnknownScorer(String),
    #[error("invalid scorer parameter: {0}")]
    InvalidParameter(String),
}

/// An ordered sequence of distinct chunk ids and its total token cost.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Combination {
    pub chunk_ids: Vec<String>,
    pub total_cost: u64,
}

impl Combination {
    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }
}

/// The candidate chunks of one search, addressable by id or by position.
///
/// Token sets are computed once here so scorers do not re-tokenize chunk
/// text on every call.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    chunks: Vec<Chunk>,
    terms: Vec<HashSet<String>>,
    index: HashMap<String, usize>,
}

impl CandidatePool {
    pub fn new(chunks: Vec<Chunk>) -> Result<Self, ScoreError> {
        let mut index = HashMap::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            if index.insert(chunk.id.clone(), i).is_some() {
                return Err(ScoreError::DuplicateCandidate(chunk.id.clone()));
            }
        }
        let terms = chunks.iter().map(Chunk::term_set).collect();
        Ok(CandidatePool {
            chunks,
            terms,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, i: usize) -> &Chunk {
        &self.chunks[i]
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn terms(&self, i: usize) -> &HashSet<String> {
        &self.terms[i]
    }

    pub fn cost(&self, i: usize) -> u64 {
        u64::from(self.chunks[i].token_count)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn total_cost(&self, members: &[usize]) -> u64 {
        members.iter().map(|&i| self.cost(i)).sum()
    }

    pub fn combination(&self, members: &[usize]) -> Combination {
        Combination {
            chunk_ids: members.iter().map(|&i| self.chunks[i].id.clone()).collect(),
            total_cost: self.total_cost(members),
        }
    }

    /// Lexicographic order of two position sequences by chunk id.
    pub fn compare_sequences(&self, a: &[usize], b: &[usize]) -> Ordering {
        a.iter()
            .map(|&i| self.chunks[i].id.as_str())
            .cmp(b.iter().map(|&i| self.chunks[i].id.as_str()))
    }

    /// Maps a combination's ids to pool positions.
    pub fn resolve(&self, combination: &Combination) -> Result<Vec<usize>, ScoreError> {
        let mut seen = HashSet::new();
        combination
            .chunk_ids
            .iter()
            .map(|id| {
                let i = self
                    .index_of(id)
                    .ok_or_else(|| ScoreError::UnknownChunk(id.clone()))?;
                if !seen.insert(i) {
                    return Err(ScoreError::RepeatedChunk(id.clone()));
                }
                Ok(i)
            })
            .collect()
    }
}

pub trait UtilityScorer: Send + Sync {
    fn name(&self) -> &str;

    /// Scores every combination (given as pool positions) in one call.
    /// Outputs lie in `[0, 1]` and `out[i]` depends only on `batch[i]`.
    fn score_batch(&self, query: &Query, pool: &CandidatePool, batch: &[&[usize]]) -> Vec<f64>;

    fn score(&self, query: &Query, pool: &CandidatePool, combination: &[usize]) -> f64 {
        self.score_batch(query, pool, &[combination])[0]
    }
}

/// Resolves id-based combinations against `pool` and scores them in one batch.
pub fn score_batch(
    scorer: &dyn UtilityScorer,
    query: &Query,
    combinations: &[Combination],
    pool: &CandidatePool,
) -> Result<Vec<f64>, ScoreError> {
    let resolved = combinations
        .iter()
        .map(|c| pool.resolve(c))
        .collect::<Result<Vec<_>, _>>()?;
    let batch: Vec<&[usize]> = resolved.iter().map(Vec::as_slice).collect();
    Ok(scorer.score_batch(query, pool, &batch))
}

/// Noisy-OR over clipped cosine relevance. Order-free and monotone.
#[derive(Debug, Clone, Default)]
pub struct AdditiveScorer;

impl UtilityScorer for AdditiveScorer {
    fn name(&self) -> &str {
        "additive"
    }

    fn score_batch(&self, query: &Query, pool: &CandidatePool, batch: &[&[usize]]) -> Vec<f64> {
        let mut relevance: Vec<Option<f64>> = vec![None; pool.len()];
        let mut rel = |i: usize| {
            *relevance[i]
                .get_or_insert_with(|| cosine(&pool.chunk(i).embedding, &query.embedding).max(0.0))
        };
        batch
            .iter()
            .map(|members| {
                // Multiply in pool order so permutations give bit-identical results.
                let mut sorted = members.to_vec();
                sorted.sort_unstable();
                let miss: f64 = sorted.into_iter().map(|i| 1.0 - rel(i)).product();
                (1.0 - miss).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Fraction of target terms covered, minus a penalty for repeated coverage.
/// Adding a chunk that only repeats covered terms lowers the value.
#[derive(Debug, Clone)]
pub struct CoverageScorer {
    rho: f64,
}

impl CoverageScorer {
    pub fn new(rho: f64) -> Result<Self, ScoreError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(ScoreError::InvalidParameter(format!(
                "rho must be in [0, 1], got {rho}"
            )));
        }
        Ok(CoverageScorer { rho })
    }
}

impl Default for CoverageScorer {
    fn default() -> Self {
        CoverageScorer { rho: 0.05 }
    }
}

impl UtilityScorer for CoverageScorer {
    fn name(&self) -> &str {
        "coverage"
    }

    fn score_batch(&self, query: &Query, pool: &CandidatePool, batch: &[&[usize]]) -> Vec<f64> {
        let targets: Vec<String> = query.target_terms().into_iter().collect();
        if targets.is_empty() {
            return vec![0.0; batch.len()];
        }
        let q = targets.len() as f64;
        batch
            .iter()
            .map(|members| {
                let mut covered = vec![false; targets.len()];
                let mut hits = 0usize;
                for &i in *members {
                    let terms = pool.terms(i);
                    for (t, seen) in targets.iter().zip(covered.iter_mut()) {
                        if terms.contains(t) {
                            hits += 1;
                            *seen = true;
                        }
                    }
                }
                let covered = covered.iter().filter(|&&c| c).count();
                let duplicates = hits - covered;
                (covered as f64 / q - self.rho * duplicates as f64 / q).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Position-discounted coverage: each target term is worth `gamma^(p - 1)`
/// where `p` is the 1-based position of the first chunk containing it.
#[derive(Debug, Clone)]
pub struct OrderScorer {
    gamma: f64,
}

impl OrderScorer {
    pub fn new(gamma: f64) -> Result<Self, ScoreError> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(ScoreError::InvalidParameter(format!(
                "gamma must be in (0, 1], got {gamma}"
            )));
        }
        Ok(OrderScorer { gamma })
    }
}

impl Default for OrderScorer {
    fn default() -> Self {
        OrderScorer { gamma: 0.9 }
    }
}

impl UtilityScorer for OrderScorer {
    fn name(&self) -> &str {
        "order"
    }

    fn score_batch(&self, query: &Query, pool: &CandidatePool, batch: &[&[usize]]) -> Vec<f64> {
        let targets: Vec<String> = query.target_terms().into_iter().collect();
        if targets.is_empty() {
            return vec![0.0; batch.len()];
        }
        batch
            .iter()
            .map(|members| {
                let total: f64 = targets
                    .iter()
                    .filter_map(|t| members.iter().position(|&i| pool.terms(i).contains(t)))
                    .map(|p| self.gamma.powi(p as i32))
                    .sum();
                (total / targets.len() as f64).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Scorer-specific knobs; ignored by scorers that do not use them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub rho: f64,
    pub gamma: f64,
}

impl Default for ScorerParams {
    fn default() -> Self {
        ScorerParams {
            rho: 0.05,
            gamma: 0.9,
        }
    }
}

pub const SCORER_NAMES: [&str; 3] = ["additive", "coverage", "order"];

pub fn scorer_by_name(
    name: &str,
    params: ScorerParams,
) -> Result<Box<dyn UtilityScorer>, ScoreError> {
    match name {
        "additive" => Ok(Box::new(AdditiveScorer)),
        "coverage" => Ok(Box::new(CoverageScorer::new(params.rho)?)),
        "order" => Ok(Box::new(OrderScorer::new(params.gamma)?)),
        other => Err(ScoreError::UnknownScorer(other.to_string())),
    }
}
