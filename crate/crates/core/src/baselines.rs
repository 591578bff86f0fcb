//! Comparator strategies: a budget-filling greedy baseline and the
//! exhaustive ordered-combination oracle.

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Query;
use crate::mcts::SearchResult;
use crate::scorer::{CandidatePool, UtilityScorer};

/// Largest candidate set the oracle will enumerate.
pub const MAX_ORACLE_CANDIDATES: usize = 12;
/// Default sequence length cap for the oracle.
pub const DEFAULT_MAX_LEN: usize = 6;

const ORACLE_BATCH: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("exhaustive oracle refuses {count} candidates (limit {MAX_ORACLE_CANDIDATES})")]
    TooManyCandidates { count: usize },
}

/// Scores every candidate alone, then appends them best-first, skipping
/// any that would overflow the budget.
pub fn greedy_topk(
    query: &Query,
    pool: &CandidatePool,
    budget: u64,
    scorer: &dyn UtilityScorer,
) -> SearchResult {
    let started = Instant::now();
    if pool.is_empty() {
        return SearchResult::empty();
    }
    let singles: Vec<[usize; 1]> = (0..pool.len()).map(|i| [i]).collect();
    let batch: Vec<&[usize]> = singles.iter().map(|s| s.as_slice()).collect();
    let alone = scorer.score_batch(query, pool, &batch);

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        alone[b]
            .total_cmp(&alone[a])
            .then_with(|| pool.cost(a).cmp(&pool.cost(b)))
            .then_with(|| pool.chunk(a).id.cmp(&pool.chunk(b).id))
    });

    let mut members = Vec::new();
    let mut cost = 0;
    for i in order {
        if cost + pool.cost(i) <= budget {
            cost += pool.cost(i);
            members.push(i);
        }
    }

    let (value, calls) = if members.is_empty() {
        (0.0, 1)
    } else {
        (scorer.score(query, pool, &members), 2)
    };
    SearchResult {
        best: pool.combination(&members),
        utility: value,
        scorer_value: value,
        cost_used: cost,
        nodes_materialized: pool.len() + usize::from(!members.is_empty()),
        scorer_calls: calls,
        iterations_run: 0,
        wall_time: started.elapsed(),
    }
}

#[derive(Debug, Clone)]
struct Best {
    members: Vec<usize>,
    value: f64,
    cost: u64,
}

/// `Greater` when `a` beats `b`: higher value, then lower cost, then the
/// lexicographically smaller id sequence.
fn compare(pool: &CandidatePool, a: &Best, b: &Best) -> Ordering {
    a.value
        .total_cmp(&b.value)
        .then_with(|| b.cost.cmp(&a.cost))
        .then_with(|| pool.compare_sequences(&b.members, &a.members))
}

struct Enumeration<'a> {
    query: &'a Query,
    pool: &'a CandidatePool,
    scorer: &'a dyn UtilityScorer,
    budget: u64,
    max_len: usize,
    pending: Vec<(Vec<usize>, u64)>,
    best: Option<Best>,
    enumerated: usize,
    calls: usize,
}

impl Enumeration<'_> {
    fn visit(&mut self, members: &mut Vec<usize>, cost: u64) {
        self.pending.push((members.clone(), cost));
        if self.pending.len() >= ORACLE_BATCH {
            self.flush();
        }
        if members.len() == self.max_len {
            return;
        }
        for i in 0..self.pool.len() {
            let next = cost + self.pool.cost(i);
            if members.contains(&i) || next > self.budget {
                continue;
            }
            members.push(i);
            self.visit(members, next);
            members.pop();
        }
    }

    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let pending = std::mem::take(&mut self.pending);
        let batch: Vec<&[usize]> = pending.iter().map(|(m, _)| m.as_slice()).collect();
        let values = self.scorer.score_batch(self.query, self.pool, &batch);
        self.calls += 1;
        self.enumerated += pending.len();
        for ((members, cost), value) in pending.into_iter().zip(values) {
            let candidate = Best {
                members,
                value,
                cost,
            };
            let better = match &self.best {
                None => true,
                Some(best) => compare(self.pool, &candidate, best) == Ordering::Greater,
            };
            if better {
                self.best = Some(candidate);
            }
        }
    }
}

/// Enumerates every ordered sequence of distinct candidates with length at
/// most `max_len` and cost within `budget`, including the empty one, and
/// returns the best. `nodes_materialized` reports how many sequences were
/// scored.
pub fn exhaustive_oracle(
    query: &Query,
    pool: &CandidatePool,
    budget: u64,
    scorer: &dyn UtilityScorer,
    max_len: usize,
) -> Result<SearchResult, OracleError> {
    if pool.len() > MAX_ORACLE_CANDIDATES {
        return Err(OracleError::TooManyCandidates { count: pool.len() });
    }
    let started = Instant::now();
    let new_walk = || Enumeration {
        query,
        pool,
        scorer,
        budget,
        max_len,
        pending: Vec::new(),
        best: None,
        enumerated: 0,
        calls: 0,
    };

    // The empty sequence, then one independent walk per first chunk.
    let mut root = new_walk();
    root.pending.push((Vec::new(), 0));
    root.flush();
    let firsts: Vec<usize> = if max_len == 0 {
        Vec::new()
    } else {
        (0..pool.len())
            .filter(|&i| pool.cost(i) <= budget)
            .collect()
    };
    let walks: Vec<Enumeration<'_>> = firsts
        .into_par_iter()
        .map(|first| {
            let mut walk = new_walk();
            walk.visit(&mut vec![first], pool.cost(first));
            walk.flush();
            walk
        })
        .collect();

    let mut best = root.best.take().expect("empty sequence scored");
    let mut enumerated = root.enumerated;
    let mut calls = root.calls;
    for walk in walks {
        enumerated += walk.enumerated;
        calls += walk.calls;
        if let Some(candidate) = walk.best {
            if compare(pool, &candidate, &best) == Ordering::Greater {
                best = candidate;
            }
        }
    }

    Ok(SearchResult {
        best: pool.combination(&best.members),
        utility: best.value,
        scorer_value: best.value,
        cost_used: best.cost,
        nodes_materialized: enumerated,
        scorer_calls: calls,
        iterations_run: 0,
        wall_time: started.elapsed(),
    })
}
