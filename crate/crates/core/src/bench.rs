//! Benchmark harness: runs search strategies over generated instances and
//! reports each strategy's value relative to the exhaustive oracle.
//!
//! Rows hold only deterministic fields, so a report is byte-identical across
//! runs and thread counts. Wall times are kept in a separate timing list.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, AgentWeights};
use crate::baselines::{exhaustive_oracle, greedy_topk, OracleError, DEFAULT_MAX_LEN};
use crate::instances::{Family, Instance};
use crate::mcts::{search, SearchConfig, SearchError, SearchResult};
use crate::scorer::{scorer_by_name, CandidatePool, ScoreError, ScorerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mcts,
    Greedy,
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Mcts, Strategy::Greedy, Strategy::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mcts => "mcts",
            Strategy::Greedy => "greedy",
            Strategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?} (expected mcts, greedy, oracle or all)"))
    }
}

/// Parses a comma-separated strategy list; `all` selects every strategy.
pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>, String> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "all" {
            out.extend(Strategy::ALL);
        } else {
            out.push(part.parse()?);
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err("no strategies given".into());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Search settings; `budget` and `scorer` are ignored in favour of each
    /// instance's own unless overridden below.
    pub search: SearchConfig,
    pub budget_override: Option<u64>,
    /// Scorer used to drive search and greedy; quality is always measured
    /// with the instance family's scorer.
    pub scorer_override: Option<String>,
    pub params: ScorerParams,
    pub strategies: Vec<Strategy>,
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            search: SearchConfig::default(),
            budget_override: None,
            scorer_override: None,
            params: ScorerParams::default(),
            strategies: Strategy::ALL.to_vec(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    pub family: Family,
    pub strategy: Strategy,
    pub search_scorer: String,
    pub eval_scorer: String,
    pub candidates: usize,
    pub budget: u64,
    pub chunk_ids: Vec<String>,
    pub scorer_value: f64,
    pub oracle_value: f64,
    pub oracle_ratio: f64,
    pub cost_used: u64,
    /// Whether some unused candidate would still fit in the budget.
    pub extendable: bool,
    pub iterations: usize,
    pub cost_coefficient: f64,
    pub iterations_run: usize,
    pub nodes_materialized: usize,
    pub scorer_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub instance: String,
    pub strategy: Strategy,
    pub wall_time_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub timings: Vec<TimingRow>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scorer(#[from] ScoreError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("cannot build thread pool: {0}")]
    Threads(String),
}

/// Runs every configured strategy on every instance. Rows come back in
/// instance order, strategies in [`Strategy`] order.
pub fn run_bench(
    instances: &[Instance],
    config: &BenchConfig,
    agent: Option<&AgentWeights>,
) -> Result<BenchReport, BenchError> {
    if let Some(name) = &config.scorer_override {
        scorer_by_name(name, config.params)?;
    }
    let work = || {
        instances
            .par_iter()
            .map(|inst| run_instance(inst, config, agent))
            .collect::<Result<Vec<_>, _>>()
    };
    let per_instance = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| BenchError::Threads(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut report = BenchReport::default();
    for (rows, timings) in per_instance {
        report.rows.extend(rows);
        report.timings.extend(timings);
    }
    Ok(report)
}

fn run_instance(
    inst: &Instance,
    config: &BenchConfig,
    agent: Option<&AgentWeights>,
) -> Result<(Vec<BenchRow>, Vec<TimingRow>), BenchError> {
    let pool = CandidatePool::new(inst.candidates.clone())?;
    let budget = config.budget_override.unwrap_or(inst.budget);
    let eval_name = inst.family.scorer();
    let eval = scorer_by_name(eval_name, config.params)?;

    let mut search_config = SearchConfig {
        budget,
        scorer: config
            .scorer_override
            .clone()
            .unwrap_or_else(|| eval_name.to_string()),
        ..config.search.clone()
    };
    if let Some(weights) = agent {
        search_config = weights.predict_config(&inst.query, &search_config)?;
    }
    let driver = scorer_by_name(&search_config.scorer, config.params)?;

    let max_len = DEFAULT_MAX_LEN.min(pool.len());
    let oracle = exhaustive_oracle(&inst.query, &pool, budget, eval.as_ref(), max_len)?;

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &strategy in &config.strategies {
        let started = Instant::now();
        let (result, scorer_name) = match strategy {
            Strategy::Mcts => (
                search(&inst.query, &pool, &search_config, driver.as_ref())?,
                search_config.scorer.clone(),
            ),
            Strategy::Greedy => (
                greedy_topk(&inst.query, &pool, budget, driver.as_ref()),
                search_config.scorer.clone(),
            ),
            Strategy::Oracle => (oracle.clone(), eval_name.to_string()),
        };
        let wall = match strategy {
            Strategy::Oracle => oracle.wall_time,
            _ => started.elapsed(),
        };
        rows.push(make_row(
            inst,
            &pool,
            strategy,
            &result,
            &oracle,
            scorer_name,
            &search_config,
            eval.as_ref(),
        )?);
        timings.push(TimingRow {
            instance: inst.id.clone(),
            strategy,
            wall_time_us: wall.as_micros() as u64,
        });
    }
    Ok((rows, timings))
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    inst: &Instance,
    pool: &CandidatePool,
    strategy: Strategy,
    result: &SearchResult,
    oracle: &SearchResult,
    search_scorer: String,
    config: &SearchConfig,
    eval: &dyn crate::scorer::UtilityScorer,
) -> Result<BenchRow, BenchError> {
    let members = pool.resolve(&result.best)?;
    let value = eval.score(&inst.query, pool, &members);
    let extendable = (0..pool.len())
        .filter(|i| !members.contains(i))
        .any(|i| result.cost_used + pool.cost(i) <= config.budget);
    let (iterations, cost_coefficient) = match strategy {
        Strategy::Mcts => (config.iterations, config.cost_coefficient),
        _ => (0, 0.0),
    };
    Ok(BenchRow {
        instance: inst.id.clone(),
        family: inst.family,
        strategy,
        search_scorer,
        eval_scorer: eval.name().to_string(),
        candidates: pool.len(),
        budget: config.budget,
        chunk_ids: result.best.chunk_ids.clone(),
        scorer_value: value,
        oracle_value: oracle.scorer_value,
        oracle_ratio: oracle_ratio(value, oracle.scorer_value),
        cost_used: result.cost_used,
        extendable,
        iterations,
        cost_coefficient,
        iterations_run: result.iterations_run,
        nodes_materialized: result.nodes_materialized,
        scorer_calls: result.scorer_calls,
    })
}

/// `value / oracle`, or 1 when the oracle itself scores 0.
pub fn oracle_ratio(value: f64, oracle: f64) -> f64 {
    if oracle > 0.0 {
        value / oracle
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub family: Family,
    pub strategy: Strategy,
    pub count: usize,
    pub mean_ratio: f64,
    pub mean_value: f64,
    pub mean_cost: f64,
    pub mean_budget: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Per (family, strategy) summary. Latency percentiles use nearest rank over
/// matching timing rows; they are 0 when no timings are supplied.
pub fn aggregate(rows: &[BenchRow], timings: &[TimingRow]) -> Vec<Aggregate> {
    let times: BTreeMap<(&str, Strategy), u64> = timings
        .iter()
        .map(|t| ((t.instance.as_str(), t.strategy), t.wall_time_us))
        .collect();
    let mut groups: BTreeMap<(Family, Strategy), Vec<&BenchRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.family, row.strategy))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((family, strategy), group)| {
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&BenchRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            let mut latencies: Vec<u64> = group
                .iter()
                .filter_map(|r| times.get(&(r.instance.as_str(), strategy)).copied())
                .collect();
            latencies.sort_unstable();
            Aggregate {
                family,
                strategy,
                count: group.len(),
                mean_ratio: mean(&|r| r.oracle_ratio),
                mean_value: mean(&|r| r.scorer_value),
                mean_cost: mean(&|r| r.cost_used as f64),
                mean_budget: mean(&|r| r.budget as f64),
                p50_ms: percentile(&latencies, 0.50),
                p95_ms: percentile(&latencies, 0.95),
            }
        })
        .collect()
}

fn percentile(sorted_us: &[u64], q: f64) -> f64 {
    if sorted_us.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted_us.len() as f64).ceil() as usize).clamp(1, sorted_us.len());
    sorted_us[rank - 1] as f64 / 1000.0
}

/// Renders aggregates as a fixed-width text table.
pub fn format_table(aggregates: &[Aggregate]) -> String {
    let mut out = format!(
        "{:<10} {:<8} {:>5} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}\n",
        "family", "strategy", "n", "ratio", "value", "cost", "budget", "p50_ms", "p95_ms"
    );
    for a in aggregates {
        out.push_str(&format!(
            "{:<10} {:<8} {:>5} {:>10.4} {:>10.4} {:>10.1} {:>10.1} {:>9.3} {:>9.3}\n",
            a.family.name(),
            a.strategy.name(),
            a.count,
            a.mean_ratio,
            a.mean_value,
            a.mean_cost,
            a.mean_budget,
            a.p50_ms,
            a.p95_ms
        ));
    }
    out
}

/// Serializes rows as JSON lines.
pub fn rows_to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("row serializes"));
        out.push('\n');
    }
    out
}
