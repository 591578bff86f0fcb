use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use corag::agent::{AgentPrediction, AgentWeights};
use corag::baselines::MAX_ORACLE_CANDIDATES;
use corag::bench::{
    aggregate, format_table, parse_strategies, rows_to_jsonl, run_bench, BenchConfig,
};
use corag::corpus::{read_documents, read_queries, DEFAULT_DIMENSION};
use corag::instances::{generate_instances, InstanceParams};
use corag::mcts::{
    Extraction, DEFAULT_BUDGET, DEFAULT_CANDIDATES, DEFAULT_COST_COEFFICIENT, DEFAULT_EXPLORATION,
    DEFAULT_ITERATIONS,
};
use corag::{
    chunk_corpus, scorer_by_name, search, CandidatePool, Query, ScorerParams, SearchConfig,
    VectorStore,
};

/// Budget-constrained search for the best ordered combination of retrieved chunks.
#[derive(Parser)]
#[command(name = "corag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk and embed a JSONL corpus into a vector store file.
    Ingest(IngestArgs),
    /// Retrieve candidates for queries and search for the best combination.
    Search(SearchArgs),
    /// Run strategies over generated instances and report oracle ratios.
    Bench(BenchArgs),
    /// Print the agent's prediction for queries.
    AgentPredict(AgentPredictArgs),
    /// Write generated benchmark instances as JSONL.
    InstanceGen(InstanceGenArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Corpus file: one {"id", "text"} object per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 256)]
    chunk_size: usize,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    dimension: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SearchFlags {
    /// Token budget B.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Exploration coefficient.
    #[arg(long = "c", default_value_t = DEFAULT_EXPLORATION)]
    exploration: f64,
    /// Cost coefficient.
    #[arg(long, default_value_t = DEFAULT_COST_COEFFICIENT)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: usize,
    /// Candidates retrieved per query.
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    candidates: usize,
    /// Value function: additive, coverage or order.
    #[arg(long, default_value = "additive")]
    scorer: String,
    /// Duplicate penalty of the coverage scorer.
    #[arg(long, default_value_t = ScorerParams::default().rho)]
    rho: f64,
    /// Position decay of the order scorer.
    #[arg(long, default_value_t = ScorerParams::default().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Node estimate used to pick the answer: value or mean.
    #[arg(long, default_value = "value")]
    extraction: String,
    /// Agent weight file; overrides scorer, iterations and lambda per query.
    #[arg(long)]
    agent: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    store: PathBuf,
    /// A single query given inline.
    #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
    query_text: Option<String>,
    /// Query file: one {"id", "text", "relevant_terms"?} object per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[command(flatten)]
    flags: SearchFlags,
    /// Include wall time (non-deterministic) in the output.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Instances generated per family.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest candidate pool per instance (8 to 12 by default).
    #[arg(long, default_value_t = 12)]
    max_chunks: usize,
    /// Overrides every instance's own budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Comma-separated: mcts, greedy, oracle or all.
    #[arg(long, alias = "strategy", default_value = "all")]
    strategies: String,
    #[arg(long = "c", default_value_t = DEFAULT_EXPLORATION)]
    exploration: f64,
    #[arg(long, default_value_t = DEFAULT_COST_COEFFICIENT)]
    lambda: f64,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    /// Drives search with this scorer instead of each family's own.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long, default_value_t = ScorerParams::default().rho)]
    rho: f64,
    #[arg(long, default_value_t = ScorerParams::default().gamma)]
    gamma: f64,
    #[arg(long, default_value = "value")]
    extraction: String,
    #[arg(long)]
    agent: Option<PathBuf>,
    /// Row file (JSONL); rows go to stdout when omitted. Timings are
    /// written next to it as <out>.timing.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AgentPredictArgs {
    #[arg(long)]
    agent: PathBuf,
    #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
    query_text: Option<String>,
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Args)]
struct InstanceGenArgs {
    /// Instances per family.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    max_chunks: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    /// Bad flags or inputs: exit 2.
    Invalid(anyhow::Error),
    /// Anything else: exit 1.
    Internal(anyhow::Error),
}

type CliResult<T> = Result<T, Failure>;

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Invalid(e.into())
}

fn internal<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Internal(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Search(a) => search_cmd(a),
        Command::Bench(a) => bench(a),
        Command::AgentPredict(a) => agent_predict(a),
        Command::InstanceGen(a) => instance_gen(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var("CORAG_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(invalid(anyhow!(
                "CORAG_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("cannot write {}", p.display()))
            .map_err(internal),
        None => io::stdout().write_all(text.as_bytes()).map_err(internal),
    }
}

fn load_agent(path: Option<&Path>) -> CliResult<Option<AgentWeights>> {
    path.map(|p| AgentWeights::load(p).map_err(invalid))
        .transpose()
}

fn ingest(a: IngestArgs) -> CliResult<()> {
    let docs = read_documents(&a.input).map_err(invalid)?;
    let chunks = chunk_corpus(&docs, a.chunk_size, a.dimension).map_err(invalid)?;
    let mut store = VectorStore::new(a.dimension);
    let count = chunks.len();
    for chunk in chunks {
        store.insert(chunk).map_err(invalid)?;
    }
    store.save(&a.out).map_err(internal)?;
    println!(
        "{count} chunks from {} documents -> {}",
        docs.len(),
        a.out.display()
    );
    Ok(())
}

fn scorer_params(rho: f64, gamma: f64) -> ScorerParams {
    ScorerParams { rho, gamma }
}

fn parse_extraction(s: &str) -> CliResult<Extraction> {
    s.parse().map_err(|e: String| invalid(anyhow!(e)))
}

fn base_config(f: &SearchFlags) -> CliResult<SearchConfig> {
    let config = SearchConfig {
        budget: f.budget,
        exploration: f.exploration,
        cost_coefficient: f.lambda,
        iterations: f.iterations,
        candidates: f.candidates,
        seed: f.seed,
        scorer: f.scorer.clone(),
        extraction: parse_extraction(&f.extraction)?,
    };
    config.validate().map_err(invalid)?;
    scorer_by_name(&config.scorer, scorer_params(f.rho, f.gamma)).map_err(invalid)?;
    Ok(config)
}

fn load_queries(
    text: Option<&String>,
    file: Option<&Path>,
    dimension: usize,
) -> CliResult<Vec<Query>> {
    match (text, file) {
        (Some(t), _) => Ok(vec![Query::new("q0", t.as_str(), dimension)]),
        (None, Some(p)) => read_queries(p, dimension).map_err(invalid),
        (None, None) => Err(invalid(anyhow!("give --query-text or --queries"))),
    }
}

#[derive(Serialize)]
struct ChunkOut<'a> {
    id: &'a str,
    text: &'a str,
    token_count: u32,
}

#[derive(Serialize)]
struct SearchOut<'a> {
    query: &'a str,
    config: &'a SearchConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    agent: Option<AgentPrediction>,
    #[serde(flatten)]
    result: &'a corag::SearchResult,
    chunks: Vec<ChunkOut<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_ms: Option<f64>,
}

fn search_cmd(a: SearchArgs) -> CliResult<()> {
    let base = base_config(&a.flags)?;
    let params = scorer_params(a.flags.rho, a.flags.gamma);
    let agent = load_agent(a.flags.agent.as_deref())?;
    let store = VectorStore::load(&a.store).map_err(invalid)?;
    let queries = load_queries(
        a.query_text.as_ref(),
        a.queries.as_deref(),
        store.dimension(),
    )?;

    let mut out = String::new();
    for query in &queries {
        let (config, prediction) = match &agent {
            Some(w) => (
                w.predict_config(query, &base).map_err(invalid)?,
                Some(w.predict(query).map_err(invalid)?),
            ),
            None => (base.clone(), None),
        };
        let hits = store.top_n(query, config.candidates).map_err(internal)?;
        let pool =
            CandidatePool::new(hits.iter().map(|h| h.chunk.clone()).collect()).map_err(internal)?;
        let scorer = scorer_by_name(&config.scorer, params).map_err(invalid)?;
        let result = search(query, &pool, &config, scorer.as_ref()).map_err(invalid)?;
        let chunks = result
            .best
            .chunk_ids
            .iter()
            .map(|id| {
                let c = pool.chunk(pool.index_of(id).expect("result chunk is in the pool"));
                ChunkOut {
                    id: &c.id,
                    text: &c.text,
                    token_count: c.token_count,
                }
            })
            .collect();
        let record = SearchOut {
            query: &query.id,
            config: &config,
            agent: prediction,
            result: &result,
            chunks,
            wall_time_ms: a.timing.then_some(result.wall_time.as_secs_f64() * 1000.0),
        };
        out.push_str(&serde_json::to_string(&record).map_err(internal)?);
        out.push('\n');
    }
    write_output(None, &out)
}

fn instance_params(max_chunks: usize) -> CliResult<InstanceParams> {
    let defaults = InstanceParams::default();
    let params = InstanceParams {
        max_candidates: max_chunks,
        min_candidates: defaults.min_candidates.min(max_chunks),
        ..defaults
    };
    params.validate().map_err(|e| invalid(anyhow!(e)))?;
    Ok(params)
}

fn bench(a: BenchArgs) -> CliResult<()> {
    let strategies = parse_strategies(&a.strategies).map_err(|e| invalid(anyhow!(e)))?;
    if a.max_chunks > MAX_ORACLE_CANDIDATES {
        return Err(invalid(anyhow!(
            "--max-chunks {} exceeds the oracle limit of {MAX_ORACLE_CANDIDATES}",
            a.max_chunks
        )));
    }
    let params = instance_params(a.max_chunks)?;
    let search = SearchConfig {
        exploration: a.exploration,
        cost_coefficient: a.lambda,
        iterations: a.iterations,
        seed: a.seed,
        extraction: parse_extraction(&a.extraction)?,
        ..SearchConfig::default()
    };
    search.validate().map_err(invalid)?;
    if a.budget == Some(0) {
        return Err(invalid(anyhow!("budget must be at least 1 token")));
    }
    let config = BenchConfig {
        search,
        budget_override: a.budget,
        scorer_override: a.scorer.clone(),
        params: scorer_params(a.rho, a.gamma),
        strategies,
        threads: threads_from_env()?,
    };
    if let Some(name) = &config.scorer_override {
        scorer_by_name(name, config.params).map_err(invalid)?;
    }
    let agent = load_agent(a.agent.as_deref())?;
    let instances = generate_instances(a.seed, a.instances, &params);
    let report = run_bench(&instances, &config, agent.as_ref()).map_err(|e| match e {
        corag::bench::BenchError::Oracle(_) | corag::bench::BenchError::Agent(_) => invalid(e),
        other => internal(other),
    })?;

    write_output(a.out.as_deref(), &rows_to_jsonl(&report.rows))?;
    let table = format_table(&aggregate(&report.rows, &report.timings));
    match &a.out {
        Some(path) => {
            let mut timing_path = path.clone().into_os_string();
            timing_path.push(".timing.jsonl");
            write_output(
                Some(Path::new(&timing_path)),
                &rows_to_jsonl(&report.timings),
            )?;
            print!("{table}");
        }
        None => eprint!("{table}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionOut<'a> {
    query: &'a str,
    #[serde(flatten)]
    prediction: AgentPrediction,
}

fn agent_predict(a: AgentPredictArgs) -> CliResult<()> {
    let weights = AgentWeights::load(&a.agent).map_err(invalid)?;
    let queries = load_queries(
        a.query_text.as_ref(),
        a.queries.as_deref(),
        weights.input_dim(),
    )?;
    let mut out = String::new();
    for q in &queries {
        let record = PredictionOut {
            query: &q.id,
            prediction: weights.predict(q).map_err(invalid)?,
        };
        out.push_str(&serde_json::to_string(&record).map_err(internal)?);
        out.push('\n');
    }
    write_output(None, &out)
}

fn instance_gen(a: InstanceGenArgs) -> CliResult<()> {
    let params = instance_params(a.max_chunks)?;
    let records: Vec<_> = generate_instances(a.seed, a.instances, &params)
        .iter()
        .map(|i| i.to_record())
        .collect();
    write_output(a.out.as_deref(), &rows_to_jsonl(&records))?;
    if let Some(path) = &a.out {
        println!("{} instances -> {}", records.len(), path.display());
    }
    Ok(())
}
