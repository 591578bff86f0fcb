//! Policy-tree search for the best ordered chunk combination under a token
//! budget.
//!
//! The root holds the empty combination; each child appends one unused
//! candidate to its parent's sequence. Every iteration descends from the
//! root by node utility
//!
//! ```text
//! U(v) = w/n + c * sqrt(ln N / n) - lambda * cost(v) / B
//! ```
//!
//! and expands the first unexpanded node it reaches by materializing all of
//! its budget-feasible children at once and scoring them in a single batch.
//! Children start with `n = 1` and `w = V0` (their score), so `U` is always
//! defined. The selected node's score is then propagated to its ancestors.
//!
//! The answer is the materialized non-root node with the highest
//! exploitation utility `V - lambda * cost / B`, where `V` is the node's own
//! score by default ([`Extraction::Value`]) or its running mean `w/n`
//! ([`Extraction::Mean`]). Intermediate nodes are eligible, so the result
//! need not exhaust the budget.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Query};
use crate::scorer::{CandidatePool, Combination, UtilityScorer};

pub const DEFAULT_EXPLORATION: f64 = 2.4;
pub const DEFAULT_COST_COEFFICIENT: f64 = 0.1;
pub const DEFAULT_ITERATIONS: usize = 10;
pub const DEFAULT_CANDIDATES: usize = 10;
pub const DEFAULT_BUDGET: u64 = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("budget must be at least 1 token")]
    ZeroBudget,
    #[error("iterations must be at least 1")]
    ZeroIterations,
    #[error("candidates must be at least 1")]
    ZeroCandidates,
    #[error("{name} must be a finite non-negative number, got {value}")]
    InvalidCoefficient { name: &'static str, value: f64 },
}

/// Which value estimate ranks nodes at extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extraction {
    /// The node's own score: the value the returned combination actually has.
    #[default]
    Value,
    /// The running mean `w/n`, which also reflects the node's descendants.
    Mean,
}

impl std::str::FromStr for Extraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "value" => Ok(Extraction::Value),
            "mean" => Ok(Extraction::Mean),
            other => Err(format!(
                "unknown extraction rule {other:?} (expected value or mean)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Token budget `B` for the returned combination.
    pub budget: u64,
    /// Exploration coefficient `c`.
    pub exploration: f64,
    /// Cost coefficient `lambda`.
    pub cost_coefficient: f64,
    pub iterations: usize,
    /// How many retrieved chunks feed the tree.
    pub candidates: usize,
    /// Carried through to reports. The search itself has no random choices.
    pub seed: u64,
    pub scorer: String,
    #[serde(default)]
    pub extraction: Extraction,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: DEFAULT_BUDGET,
            exploration: DEFAULT_EXPLORATION,
            cost_coefficient: DEFAULT_COST_COEFFICIENT,
            iterations: DEFAULT_ITERATIONS,
            candidates: DEFAULT_CANDIDATES,
            seed: 0,
            scorer: "additive".to_string(),
            extraction: Extraction::Value,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        if self.iterations == 0 {
            return Err(ConfigError::ZeroIterations);
        }
        if self.candidates == 0 {
            return Err(ConfigError::ZeroCandidates);
        }
        for (name, value) in [("c", self.exploration), ("lambda", self.cost_coefficient)] {
            if !value.is_finite() || value < 0.0 {
                return Err(ConfigError::InvalidCoefficient { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Combination,
    pub utility: f64,
    pub scorer_value: f64,
    pub cost_used: u64,
    pub nodes_materialized: usize,
    pub scorer_calls: usize,
    pub iterations_run: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SearchResult {
    pub fn empty() -> Self {
        SearchResult {
            best: Combination::default(),
            utility: 0.0,
            scorer_value: 0.0,
            cost_used: 0,
            nodes_materialized: 0,
            scorer_calls: 0,
            iterations_run: 0,
            wall_time: Duration::ZERO,
        }
    }
}

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTreeNode {
    /// Candidate positions in sequence order.
    pub members: Vec<usize>,
    pub cost: u64,
    /// Sum of values propagated through this node (`w`).
    pub cumulative_value: f64,
    /// Visit count (`n`).
    pub visits: u64,
    /// Scorer value at materialization (`V0`); zero at the root.
    pub value: f64,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub expanded: bool,
    pub terminal: bool,
    /// Terminal, or expanded with every child exhausted.
    pub exhausted: bool,
}

impl PolicyTreeNode {
    pub fn mean_value(&self) -> f64 {
        self.cumulative_value / self.visits as f64
    }
}

/// `w/n + c * sqrt(ln N / n) - lambda * cost / B`.
///
/// Requires `node.visits >= 1` and `total_visits >= 1`.
pub fn node_utility(node: &PolicyTreeNode, total_visits: u64, config: &SearchConfig) -> f64 {
    debug_assert!(node.visits >= 1 && total_visits >= 1);
    let n = node.visits as f64;
    let exploration = config.exploration * ((total_visits as f64).ln() / n).sqrt();
    node.mean_value() + exploration - cost_penalty(node.cost, config)
}

/// The utility used to pick the final answer: exploration term dropped.
pub fn exploitation_utility(node: &PolicyTreeNode, config: &SearchConfig) -> f64 {
    let estimate = match config.extraction {
        Extraction::Value => node.value,
        Extraction::Mean => node.mean_value(),
    };
    estimate - cost_penalty(node.cost, config)
}

fn cost_penalty(cost: u64, config: &SearchConfig) -> f64 {
    config.cost_coefficient * cost as f64 / config.budget as f64
}

/// Outcome of one selection pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub node: NodeId,
    /// The node was created by this pass; its materialization already
    /// counted as its first visit.
    pub fresh: bool,
}

pub struct PolicyTree<'a> {
    query: &'a Query,
    pool: &'a CandidatePool,
    scorer: &'a dyn UtilityScorer,
    config: &'a SearchConfig,
    nodes: Vec<PolicyTreeNode>,
    total_visits: u64,
    scorer_calls: usize,
}

impl<'a> PolicyTree<'a> {
    pub fn new(
        query: &'a Query,
        pool: &'a CandidatePool,
        scorer: &'a dyn UtilityScorer,
        config: &'a SearchConfig,
    ) -> Self {
        let root = PolicyTreeNode {
            members: Vec::new(),
            cost: 0,
            cumulative_value: 0.0,
            visits: 1,
            value: 0.0,
            parent: None,
            children: Vec::new(),
            expanded: false,
            terminal: false,
            exhausted: false,
        };
        PolicyTree {
            query,
            pool,
            scorer,
            config,
            nodes: vec![root],
            total_visits: 1,
            scorer_calls: 0,
        }
    }

    pub fn node(&self, id: NodeId) -> &PolicyTreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[PolicyTreeNode] {
        &self.nodes
    }

    /// Global visit counter `N`; starts at 1.
    pub fn total_visits(&self) -> u64 {
        self.total_visits
    }

    pub fn scorer_calls(&self) -> usize {
        self.scorer_calls
    }

    pub fn is_exhausted(&self) -> bool {
        self.nodes[ROOT].exhausted
    }

    pub fn utility(&self, id: NodeId) -> f64 {
        node_utility(&self.nodes[id], self.total_visits, self.config)
    }

    /// Descends from the root by node utility, skipping exhausted subtrees,
    /// and expands the first unexpanded node reached.
    pub fn select(&mut self) -> Selection {
        let mut current = ROOT;
        loop {
            let node = &self.nodes[current];
            if !node.expanded {
                if !self.expand(current) {
                    return Selection {
                        node: current,
                        fresh: false,
                    };
                }
                let best = self
                    .best_child(current, false)
                    .expect("expansion produced children");
                return Selection {
                    node: best,
                    fresh: true,
                };
            }
            match self.best_child(current, true) {
                Some(child) => current = child,
                None => {
                    return Selection {
                        node: current,
                        fresh: false,
                    }
                }
            }
        }
    }

    /// Propagates the selected node's score to it and its ancestors and
    /// advances the global counter. A fresh node skips its own increment.
    pub fn update(&mut self, selection: Selection) {
        let value = self.nodes[selection.node].value;
        let mut cursor = if selection.fresh {
            self.nodes[selection.node].parent
        } else {
            Some(selection.node)
        };
        while let Some(id) = cursor {
            let node = &mut self.nodes[id];
            node.cumulative_value += value;
            node.visits += 1;
            cursor = node.parent;
        }
        self.total_visits += 1;
    }

    /// Materializes and batch-scores every feasible child of `id`. Returns
    /// false (and marks the node terminal) when none exists.
    fn expand(&mut self, id: NodeId) -> bool {
        let parent = &self.nodes[id];
        let budget = self.config.budget;
        let extensions: Vec<Vec<usize>> = (0..self.pool.len())
            .filter(|i| !parent.members.contains(i) && parent.cost + self.pool.cost(*i) <= budget)
            .map(|i| {
                let mut members = parent.members.clone();
                members.push(i);
                members
            })
            .collect();
        let parent_cost = parent.cost;
        self.nodes[id].expanded = true;
        if extensions.is_empty() {
            self.nodes[id].terminal = true;
            self.mark_exhausted_upwards(id);
            return false;
        }

        let batch: Vec<&[usize]> = extensions.iter().map(Vec::as_slice).collect();
        let values = self.scorer.score_batch(self.query, self.pool, &batch);
        self.scorer_calls += 1;
        debug_assert_eq!(values.len(), extensions.len());

        for (members, value) in extensions.into_iter().zip(values) {
            let cost = parent_cost + self.pool.cost(*members.last().unwrap());
            // Known dead ends are closed at birth so no iteration is spent on them.
            let terminal = !(0..self.pool.len())
                .any(|i| !members.contains(&i) && cost + self.pool.cost(i) <= budget);
            let child = self.nodes.len();
            self.nodes.push(PolicyTreeNode {
                members,
                cost,
                cumulative_value: value,
                visits: 1,
                value,
                parent: Some(id),
                children: Vec::new(),
                expanded: terminal,
                terminal,
                exhausted: terminal,
            });
            self.nodes[id].children.push(child);
        }
        self.mark_exhausted_upwards(id);
        true
    }

    fn mark_exhausted_upwards(&mut self, id: NodeId) {
        let mut cursor = Some(id);
        while let Some(current) = cursor {
            let node = &self.nodes[current];
            let done = node.terminal
                || (node.expanded && node.children.iter().all(|&c| self.nodes[c].exhausted));
            if !done || node.exhausted && current != id {
                break;
            }
            self.nodes[current].exhausted = true;
            cursor = self.nodes[current].parent;
        }
    }

    fn best_child(&self, id: NodeId, skip_exhausted: bool) -> Option<NodeId> {
        self.nodes[id]
            .children
            .iter()
            .copied()
            .filter(|&c| !(skip_exhausted && self.nodes[c].exhausted))
            .map(|c| (c, self.utility(c)))
            .max_by(|a, b| self.rank(a.0, a.1, b.0, b.1))
            .map(|(c, _)| c)
    }

    /// Orders two nodes by utility, then lower cost, then smaller id
    /// sequence; `Greater` means `a` is preferred.
    fn rank(&self, a: NodeId, ua: f64, b: NodeId, ub: f64) -> Ordering {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        ua.total_cmp(&ub)
            .then_with(|| nb.cost.cmp(&na.cost))
            .then_with(|| self.pool.compare_sequences(&nb.members, &na.members))
    }

    /// Best materialized non-root node by exploitation utility, restricted
    /// to nodes whose cost re-verified by tokenization fits the budget.
    /// Falls back to the root when nothing qualifies.
    pub fn extract_best(&self) -> (NodeId, f64) {
        let mut ranked: Vec<(NodeId, f64)> = (1..self.nodes.len())
            .map(|id| (id, exploitation_utility(&self.nodes[id], self.config)))
            .collect();
        ranked.sort_by(|a, b| self.rank(b.0, b.1, a.0, a.1));
        ranked
            .into_iter()
            .find(|&(id, _)| self.verified_cost(&self.nodes[id].members) <= self.config.budget)
            .unwrap_or((ROOT, 0.0))
    }

    /// Exact token cost obtained by re-tokenizing member texts.
    pub fn verified_cost(&self, members: &[usize]) -> u64 {
        members
            .iter()
            .map(|&i| tokenize(&self.pool.chunk(i).text).len() as u64)
            .sum()
    }

    /// Runs up to `config.iterations` select/update rounds, stopping early
    /// once every branch is exhausted. Returns the number of rounds run.
    pub fn run(&mut self) -> usize {
        let mut iterations = 0;
        while iterations < self.config.iterations && !self.is_exhausted() {
            let selection = self.select();
            self.update(selection);
            iterations += 1;
        }
        iterations
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Searches the policy tree over `pool` and extracts the best combination.
pub fn search(
    query: &Query,
    pool: &CandidatePool,
    config: &SearchConfig,
    scorer: &dyn UtilityScorer,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    let started = Instant::now();
    let mut tree = PolicyTree::new(query, pool, scorer, config);
    let iterations_run = tree.run();
    let (best, utility) = tree.extract_best();
    let node = tree.node(best);
    let cost_used = tree.verified_cost(&node.members);
    debug_assert!(cost_used <= config.budget);
    Ok(SearchResult {
        best: pool.combination(&node.members),
        utility,
        scorer_value: node.value,
        cost_used,
        nodes_materialized: tree.nodes().len() - 1,
        scorer_calls: tree.scorer_calls(),
        iterations_run,
        wall_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;
    use crate::scorer::{CoverageScorer, OrderScorer};
    use proptest::prelude::*;

    const DIM: usize = 32;

    /// Scores every non-empty combination with the same constant.
    struct Constant(f64);

    impl UtilityScorer for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn score_batch(&self, _: &Query, _: &CandidatePool, batch: &[&[usize]]) -> Vec<f64> {
            batch
                .iter()
                .map(|m| if m.is_empty() { 0.0 } else { self.0 })
                .collect()
        }
    }

    /// Looks the value up from a per-candidate table (sum, clipped).
    struct Table(Vec<f64>);

    impl UtilityScorer for Table {
        fn name(&self) -> &str {
            "table"
        }
        fn score_batch(&self, _: &Query, _: &CandidatePool, batch: &[&[usize]]) -> Vec<f64> {
            batch
                .iter()
                .map(|m| m.iter().map(|&i| self.0[i]).sum::<f64>().min(1.0))
                .collect()
        }
    }

    fn node(w: f64, n: u64, cost: u64) -> PolicyTreeNode {
        PolicyTreeNode {
            members: vec![0],
            cost,
            cumulative_value: w,
            visits: n,
            value: w,
            parent: Some(ROOT),
            children: Vec::new(),
            expanded: false,
            terminal: false,
            exhausted: false,
        }
    }

    fn config(budget: u64, c: f64, lambda: f64, iterations: usize) -> SearchConfig {
        SearchConfig {
            budget,
            exploration: c,
            cost_coefficient: lambda,
            iterations,
            ..SearchConfig::default()
        }
    }

    /// Candidates whose cost equals the number of words in their text.
    fn pool_of(specs: &[(&str, &str)]) -> CandidatePool {
        CandidatePool::new(
            specs
                .iter()
                .map(|(id, t)| Chunk::from_text(*id, *t, DIM))
                .collect(),
        )
        .unwrap()
    }

    fn sized_pool(costs: &[usize]) -> CandidatePool {
        CandidatePool::new(
            costs
                .iter()
                .enumerate()
                .map(|(i, &c)| Chunk::from_text(format!("c{i}"), vec!["w"; c].join(" "), DIM))
                .collect(),
        )
        .unwrap()
    }

    fn terms_query(terms: &[&str]) -> Query {
        Query::new("q", terms.join(" "), DIM).with_relevant_terms(terms.iter().copied())
    }

    #[test]
    fn node_utility_examples() {
        assert_eq!(
            node_utility(&node(0.5, 1, 100), 1, &config(1024, 0.0, 0.0, 1)),
            0.5
        );

        let u = node_utility(&node(0.5, 1, 100), 3, &config(1024, 2.4, 0.1, 1));
        assert!((u - 3.005_787_352_523_692).abs() < 1e-12, "{u}");

        let with = node_utility(&node(0.7, 4, 300), 9, &config(1024, 1.3, 0.1, 1));
        let without = node_utility(&node(0.7, 4, 300), 9, &config(1024, 1.3, 0.0, 1));
        assert!((with - without + 0.1 * 300.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert_eq!(
            config(0, 1.0, 0.1, 1).validate(),
            Err(ConfigError::ZeroBudget)
        );
        assert_eq!(
            config(10, 1.0, 0.1, 0).validate(),
            Err(ConfigError::ZeroIterations)
        );
        assert!(config(10, -1.0, 0.1, 1).validate().is_err());
        assert!(config(10, 1.0, f64::NAN, 1).validate().is_err());
        assert!(SearchConfig::default().validate().is_ok());
    }

    #[test]
    fn fresh_root_expands_all_children_in_one_batch() {
        let pool = sized_pool(&[3, 3, 3, 3]);
        let q = terms_query(&["w"]);
        let cfg = config(100, 2.4, 0.1, 1);
        let scorer = Constant(0.5);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        let sel = tree.select();
        assert!(sel.fresh);
        assert_eq!(tree.node(ROOT).children.len(), 4);
        assert_eq!(tree.scorer_calls(), 1);
    }

    #[test]
    fn expansion_filters_infeasible_candidates() {
        let pool = sized_pool(&[5, 5, 50, 5, 5, 60, 5, 5, 70, 5]);
        let q = terms_query(&["w"]);
        let cfg = config(20, 2.4, 0.1, 1);
        let scorer = Constant(0.5);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        tree.select();
        assert_eq!(tree.node(ROOT).children.len(), 7);
    }

    #[test]
    fn equal_utility_prefers_lower_cost() {
        let pool = sized_pool(&[7, 5]);
        let q = terms_query(&["w"]);
        let cfg = config(100, 2.4, 0.0, 1);
        let scorer = Constant(0.5);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        let sel = tree.select();
        assert_eq!(tree.node(sel.node).members, vec![1]);
    }

    #[test]
    fn equal_utility_and_cost_prefers_smaller_id() {
        let pool = sized_pool(&[5, 5]);
        let q = terms_query(&["w"]);
        let cfg = config(100, 2.4, 0.0, 1);
        let scorer = Constant(0.5);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        let sel = tree.select();
        assert_eq!(tree.node(sel.node).members, vec![0]);
    }

    #[test]
    fn update_counts_fresh_leaf_once() {
        let pool = sized_pool(&[1, 1]);
        let q = terms_query(&["w"]);
        let cfg = config(100, 0.0, 0.0, 1);
        let scorer = Table(vec![0.6, 0.2]);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        let sel = tree.select();
        assert_eq!(tree.node(sel.node).members, vec![0]);
        tree.update(sel);
        let root = tree.node(ROOT);
        assert!((root.cumulative_value - 0.6).abs() < 1e-12);
        assert_eq!(root.visits, 2);
        assert_eq!(tree.node(sel.node).visits, 1);
        assert_eq!(tree.total_visits(), 2);
    }

    #[test]
    fn update_propagates_along_chain() {
        // Chain root -> a -> b with b scoring 0.4 (a alone 0.3, b's increment 0.1).
        let pool = sized_pool(&[1, 1]);
        let q = terms_query(&["w"]);
        let cfg = config(100, 0.0, 0.0, 2);
        let scorer = Table(vec![0.3, 0.1]);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        let first = tree.select();
        tree.update(first);
        let a = first.node;
        let (wa, wr) = (
            tree.node(a).cumulative_value,
            tree.node(ROOT).cumulative_value,
        );
        let second = tree.select();
        assert_eq!(tree.node(second.node).parent, Some(a));
        assert!((tree.node(second.node).value - 0.4).abs() < 1e-12);
        tree.update(second);
        assert!((tree.node(a).cumulative_value - wa - 0.4).abs() < 1e-12);
        assert!((tree.node(ROOT).cumulative_value - wr - 0.4).abs() < 1e-12);
    }

    #[test]
    fn nothing_feasible_gives_empty_result() {
        let pool = sized_pool(&[50, 60]);
        let q = terms_query(&["w"]);
        let result = search(&q, &pool, &config(10, 2.4, 0.1, 5), &Constant(0.5)).unwrap();
        assert!(result.best.is_empty());
        assert_eq!(result.cost_used, 0);
        assert_eq!(result.utility, 0.0);
        assert_eq!(result.iterations_run, 1);
    }

    #[test]
    fn single_feasible_candidate_is_chosen() {
        let pool = sized_pool(&[50, 5, 60]);
        let q = terms_query(&["w"]);
        let result = search(&q, &pool, &config(10, 2.4, 0.1, 10), &Constant(0.5)).unwrap();
        assert_eq!(result.best.chunk_ids, vec!["c1"]);
        assert_eq!(result.cost_used, 5);
    }

    #[test]
    fn order_scorer_puts_covering_chunk_first() {
        let pool = pool_of(&[("b", "unrelated words"), ("a", "t1 t2")]);
        let q = terms_query(&["t1", "t2"]);
        let cfg = config(100, 2.4, 0.0, 20);
        let result = search(&q, &pool, &cfg, &OrderScorer::default()).unwrap();
        assert_eq!(result.best.chunk_ids[0], "a");
        assert_eq!(result.scorer_value, 1.0);
    }

    #[test]
    fn shallow_middle_node_beats_deeper_worse_leaf() {
        // "x" covers both terms; every extension only repeats them.
        let pool = pool_of(&[("x", "t1 t2"), ("y", "t1 a"), ("z", "t1 b")]);
        let q = terms_query(&["t1", "t2"]);
        let cfg = config(100, 2.4, 0.0, 50);
        let scorer = CoverageScorer::default();
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        tree.run();
        let (best, _) = tree.extract_best();
        assert_eq!(tree.node(best).members, vec![0]);
        assert!(tree.nodes().iter().any(|n| n.members.len() == 3));
    }

    #[test]
    fn zero_lambda_extracts_by_mean_value() {
        let pool = sized_pool(&[1, 2, 3]);
        let q = terms_query(&["w"]);
        let cfg = SearchConfig {
            extraction: Extraction::Mean,
            ..config(100, 1.0, 0.0, 30)
        };
        let scorer = Table(vec![0.2, 0.5, 0.1]);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        tree.run();
        let (best, utility) = tree.extract_best();
        let max_mean = tree.nodes()[1..]
            .iter()
            .map(PolicyTreeNode::mean_value)
            .fold(f64::MIN, f64::max);
        assert_eq!(utility, max_mean);
        assert_eq!(tree.node(best).mean_value(), max_mean);
    }

    #[test]
    fn zero_lambda_extracts_by_own_value() {
        let pool = sized_pool(&[1, 2, 3]);
        let q = terms_query(&["w"]);
        let cfg = config(100, 1.0, 0.0, 30);
        let scorer = Table(vec![0.2, 0.5, 0.1]);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        tree.run();
        let (best, utility) = tree.extract_best();
        let max_value = tree.nodes()[1..]
            .iter()
            .map(|n| n.value)
            .fold(f64::MIN, f64::max);
        assert_eq!(utility, max_value);
        assert_eq!(tree.node(best).value, max_value);
    }

    #[test]
    fn descendant_inflated_mean_does_not_hide_better_pair() {
        // x1 and x2 are duplicates; y completes the coverage.
        let pool = pool_of(&[("x1", "t1 t2 u u"), ("x2", "t1 t2 v v"), ("y", "t3 w w w")]);
        let q = terms_query(&["t1", "t2", "t3"]);
        let scorer = CoverageScorer::default();
        let by_value = search(&q, &pool, &config(12, 2.4, 0.3, 200), &scorer).unwrap();
        assert_eq!(by_value.scorer_value, 1.0);
        assert_eq!(by_value.best.len(), 2);
        let mean_cfg = SearchConfig {
            extraction: Extraction::Mean,
            ..config(12, 2.4, 0.3, 200)
        };
        let by_mean = search(&q, &pool, &mean_cfg, &scorer).unwrap();
        assert!(by_mean.scorer_value < by_value.scorer_value, "{by_mean:?}");
    }

    #[test]
    fn scaling_lambda_and_budget_together_keeps_the_answer() {
        let pool = sized_pool(&[3, 4, 5, 6]);
        let q = terms_query(&["w"]);
        let cfg = config(12, 2.0, 0.3, 40);
        let scorer = Table(vec![0.3, 0.35, 0.4, 0.45]);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        tree.run();
        let (best, _) = tree.extract_best();
        let nodes = tree.nodes;
        for factor in [2u64, 5, 10] {
            let scaled = config(12 * factor, 2.0, 0.3 * factor as f64, 40);
            let mut probe = PolicyTree::new(&q, &pool, &scorer, &scaled);
            probe.nodes = nodes.clone();
            assert_eq!(probe.extract_best().0, best);
        }
    }

    #[test]
    fn zero_exploration_redescends_through_best_mean_child() {
        let pool = sized_pool(&[1, 1, 1]);
        let q = terms_query(&["w"]);
        let cfg = config(100, 0.0, 0.0, 2);
        let scorer = Table(vec![0.1, 0.6, 0.3]);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        let first = tree.select();
        tree.update(first);
        assert_eq!(tree.node(first.node).members, vec![1]);
        let second = tree.select();
        assert_eq!(tree.node(second.node).parent, Some(first.node));
    }

    #[test]
    fn large_exploration_spreads_over_root_children() {
        let pool = sized_pool(&[1, 1, 1, 1]);
        let q = terms_query(&["w"]);
        let cfg = config(100, 1000.0, 0.0, 5);
        let scorer = Table(vec![0.9, 0.1, 0.1, 0.1]);
        let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
        tree.run();
        let root_children = tree.node(ROOT).children.clone();
        assert!(root_children.iter().all(|&c| tree.node(c).expanded));
    }

    #[test]
    fn fully_explored_tree_stops_early() {
        let pool = sized_pool(&[1, 1]);
        let q = terms_query(&["w"]);
        let result = search(&q, &pool, &config(100, 1.0, 0.1, 1000), &Constant(0.5)).unwrap();
        // Root plus [0] and [1]; each singleton has exactly one extension.
        assert_eq!(result.nodes_materialized, 4);
        assert!(result.iterations_run < 1000);
    }

    #[test]
    fn extraction_skips_nodes_failing_token_verification() {
        let mut chunks = vec![
            Chunk::from_text("a", "one two", DIM),
            Chunk::from_text("b", "one", DIM),
        ];
        // Declared cost understates the real token count.
        chunks[0].token_count = 1;
        let pool = CandidatePool::new(chunks).unwrap();
        let q = terms_query(&["one", "two"]);
        let result = search(
            &q,
            &pool,
            &config(1, 2.4, 0.0, 10),
            &CoverageScorer::default(),
        )
        .unwrap();
        assert_eq!(result.best.chunk_ids, vec!["b"]);
        assert_eq!(result.cost_used, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn budget_visits_and_batching_invariants(
            costs in prop::collection::vec(1usize..12, 1..9),
            values in prop::collection::vec(0.0f64..0.4, 9),
            budget in 1u64..40,
            iterations in 1usize..60,
            c in 0.0f64..3.0,
            lambda in 0.0f64..0.5,
        ) {
            let pool = sized_pool(&costs);
            let q = terms_query(&["w"]);
            let scorer = Table(values);
            let cfg = config(budget, c, lambda, iterations);
            let mut tree = PolicyTree::new(&q, &pool, &scorer, &cfg);
            let run = tree.run();
            prop_assert!(run <= iterations);
            prop_assert_eq!(tree.node(ROOT).visits, 1 + run as u64);
            prop_assert_eq!(tree.total_visits(), 1 + run as u64);
            prop_assert!(tree.scorer_calls() <= run);
            for (id, n) in tree.nodes().iter().enumerate() {
                prop_assert!(n.cost <= budget);
                prop_assert!(n.visits >= 1);
                prop_assert!(n.cumulative_value >= 0.0);
                if let Some(p) = n.parent {
                    let parent = tree.node(p);
                    prop_assert_eq!(&n.members[..n.members.len() - 1], &parent.members[..]);
                    prop_assert!(!parent.members.contains(n.members.last().unwrap()));
                }
                if n.expanded && !n.children.is_empty() {
                    let through: u64 = n.children.iter().map(|&c| tree.node(c).visits - 1).sum();
                    prop_assert!(n.visits > through, "node {}", id);
                }
                if n.terminal {
                    prop_assert!(n.children.is_empty());
                }
            }
            let result = search(&q, &pool, &cfg, &scorer).unwrap();
            prop_assert!(result.cost_used <= budget);
            prop_assert_eq!(result.cost_used, result.best.total_cost);
            let again = search(&q, &pool, &cfg, &scorer).unwrap();
            prop_assert_eq!(SearchResult { wall_time: Duration::ZERO, ..result },
                            SearchResult { wall_time: Duration::ZERO, ..again });
        }
    }
}
