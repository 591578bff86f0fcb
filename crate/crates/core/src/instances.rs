//! Seeded synthetic benchmark instances.
//!
//! Each instance is a query with planted relevant terms, a pool of 8 to 12
//! candidate chunks of 45 to 55 tokens, and a budget that admits 2 to 4 of
//! them. Three families stress different value functions:
//!
//! * `monotone`: every relevant term lives in at most one chunk, so value only
//!   grows as chunks are added (scored with the additive scorer).
//! * `redundant`: three near-duplicate chunks share a cluster of terms while a
//!   rarer complementary chunk carries the rest, so stacking duplicates wastes
//!   budget (scored with the coverage scorer).
//! * `ordered`: one hub chunk covers the front-loaded terms and overlapping
//!   satellites fill in the tail, so position matters (scored with the order
//!   scorer).
//!
//! Families draw relevant terms from disjoint vocabularies so a query's
//! embedding identifies its family.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentWeights, RegressionScale, DEFAULT_DIMS};
use crate::corpus::{embed, tokenize, Chunk, Query, DEFAULT_DIMENSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Monotone,
    Redundant,
    Ordered,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Monotone, Family::Redundant, Family::Ordered];

    pub fn name(self) -> &'static str {
        match self {
            Family::Monotone => "monotone",
            Family::Redundant => "redundant",
            Family::Ordered => "ordered",
        }
    }

    /// The scorer whose value defines quality on this family.
    pub fn scorer(self) -> &'static str {
        match self {
            Family::Monotone => "additive",
            Family::Redundant => "coverage",
            Family::Ordered => "order",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }

    fn stem(self) -> &'static str {
        match self {
            Family::Monotone => "amber",
            Family::Redundant => "cobalt",
            Family::Ordered => "ochre",
        }
    }

    /// The planted-term vocabulary of this family.
    pub fn vocabulary(self) -> Vec<String> {
        (0..VOCABULARY_SIZE)
            .map(|i| format!("{}{i}", self.stem()))
            .collect()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown family {s:?}"))
    }
}

pub const VOCABULARY_SIZE: usize = 64;

const FILLER: &[&str] = &[
    "the", "of", "and", "a", "to", "in", "is", "was", "for", "on", "that", "with", "as", "by",
    "at", "from", "report", "section", "table", "figure", "value", "record", "system", "period",
    "during", "after", "before", "under", "between", "which", "were", "also", "other", "these",
    "some", "more", "most", "first", "later", "early", "region", "local", "general", "small",
    "large", "public", "common", "several", "level",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub min_candidates: usize,
    pub max_candidates: usize,
    pub min_budget_chunks: u64,
    pub max_budget_chunks: u64,
    pub min_chunk_tokens: usize,
    pub max_chunk_tokens: usize,
    pub dimension: usize,
}

impl Default for InstanceParams {
    fn default() -> Self {
        InstanceParams {
            min_candidates: 8,
            max_candidates: 12,
            min_budget_chunks: 2,
            max_budget_chunks: 4,
            min_chunk_tokens: 45,
            max_chunk_tokens: 55,
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl InstanceParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_candidates < 6 || self.min_candidates > self.max_candidates {
            return Err(format!(
                "candidate range {}..={} must start at 6 or more and be non-empty",
                self.min_candidates, self.max_candidates
            ));
        }
        if self.min_budget_chunks == 0 || self.min_budget_chunks > self.max_budget_chunks {
            return Err("budget chunk range must be non-empty and positive".into());
        }
        if self.min_chunk_tokens < 12 || self.min_chunk_tokens > self.max_chunk_tokens {
            return Err("chunk token range must start at 12 or more and be non-empty".into());
        }
        if self.dimension == 0 {
            return Err("dimension must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub family: Family,
    pub query: Query,
    pub candidates: Vec<Chunk>,
    pub budget: u64,
}

/// Text-only form of an instance; embeddings are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub family: Family,
    pub scorer: String,
    pub budget: u64,
    pub query: QueryRecord,
    pub candidates: Vec<ChunkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub relevant_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub id: String,
    pub text: String,
    pub token_count: u32,
}

impl Instance {
    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            id: self.id.clone(),
            family: self.family,
            scorer: self.family.scorer().to_string(),
            budget: self.budget,
            query: QueryRecord {
                id: self.query.id.clone(),
                text: self.query.text.clone(),
                relevant_terms: self.query.target_terms().into_iter().collect(),
            },
            candidates: self
                .candidates
                .iter()
                .map(|c| ChunkRecord {
                    id: c.id.clone(),
                    text: c.text.clone(),
                    token_count: c.token_count,
                })
                .collect(),
        }
    }

    pub fn from_record(record: &InstanceRecord, dimension: usize) -> Self {
        Instance {
            id: record.id.clone(),
            family: record.family,
            query: Query::new(&record.query.id, &record.query.text, dimension)
                .with_relevant_terms(record.query.relevant_terms.iter()),
            candidates: record
                .candidates
                .iter()
                .map(|c| Chunk::from_text(&c.id, &c.text, dimension))
                .collect(),
            budget: record.budget,
        }
    }
}

/// Generates `count` instances of each family, grouped by family. Every
/// instance draws from its own random stream, so instance `i` of a family is
/// the same whatever `count` is.
pub fn generate_instances(seed: u64, count: usize, params: &InstanceParams) -> Vec<Instance> {
    let mut out = Vec::with_capacity(count * Family::ALL.len());
    for family in Family::ALL {
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((family.index() << 32) | i as u64);
            out.push(Builder::new(family, i, params, &mut rng).build());
        }
    }
    out
}

struct Builder<'a> {
    family: Family,
    index: usize,
    params: &'a InstanceParams,
    rng: &'a mut ChaCha8Rng,
    texts: Vec<Vec<String>>,
}

impl<'a> Builder<'a> {
    fn new(
        family: Family,
        index: usize,
        params: &'a InstanceParams,
        rng: &'a mut ChaCha8Rng,
    ) -> Self {
        Builder {
            family,
            index,
            params,
            rng,
            texts: Vec::new(),
        }
    }

    fn build(mut self) -> Instance {
        let n = self
            .rng
            .gen_range(self.params.min_candidates..=self.params.max_candidates);
        let k = self
            .rng
            .gen_range(self.params.min_budget_chunks..=self.params.max_budget_chunks);
        let terms = match self.family {
            Family::Monotone => self.monotone(n),
            Family::Redundant => self.redundant(n),
            Family::Ordered => self.ordered(n),
        };
        self.texts.shuffle(self.rng);

        let id = format!("{}-{:03}", self.family, self.index);
        let dim = self.params.dimension;
        let candidates = self
            .texts
            .iter()
            .enumerate()
            .map(|(i, words)| Chunk::from_text(format!("{id}/c{i:02}"), render(words), dim))
            .collect();
        let query =
            Query::new(format!("{id}/q"), terms.join(" "), dim).with_relevant_terms(terms.iter());
        Instance {
            id,
            family: self.family,
            query,
            candidates,
            budget: k * self.params.max_chunk_tokens as u64,
        }
    }

    fn pick_terms(&mut self, count: usize) -> Vec<String> {
        let mut vocabulary = self.family.vocabulary();
        vocabulary.shuffle(self.rng);
        vocabulary.truncate(count);
        vocabulary
    }

    /// Adds a chunk holding `planted` words padded with filler to a random
    /// length in the configured token range (the closing period is a token).
    fn push_chunk(&mut self, planted: Vec<String>) {
        let length = self
            .rng
            .gen_range(self.params.min_chunk_tokens - 1..self.params.max_chunk_tokens)
            .max(planted.len());
        let mut words = planted;
        while words.len() < length {
            words.push(FILLER.choose(self.rng).unwrap().to_string());
        }
        words.shuffle(self.rng);
        self.texts.push(words);
    }

    fn repeated(&mut self, terms: &[String], max_repeat: usize) -> Vec<String> {
        let mut out = Vec::new();
        for t in terms {
            for _ in 0..self.rng.gen_range(1..=max_repeat) {
                out.push(t.clone());
            }
        }
        out
    }

    fn monotone(&mut self, n: usize) -> Vec<String> {
        let terms = self.pick_terms(8);
        let mut owned: Vec<Vec<String>> = vec![Vec::new(); n];
        for t in &terms {
            owned[self.rng.gen_range(0..n)].push(t.clone());
        }
        for planted in owned {
            let mut words = Vec::new();
            for t in &planted {
                for _ in 0..self.rng.gen_range(6..=10) {
                    words.push(t.clone());
                }
            }
            self.push_chunk(words);
        }
        terms
    }

    fn redundant(&mut self, n: usize) -> Vec<String> {
        let terms = self.pick_terms(7);
        let (cluster, rest) = terms.split_at(4);
        let (cluster, rest) = (cluster.to_vec(), rest.to_vec());
        for _ in 0..3 {
            let words = self.repeated(&cluster, 2);
            self.push_chunk(words);
        }
        if self.rng.gen_bool(0.85) {
            let words = self.repeated(&rest, 2);
            self.push_chunk(words);
        } else {
            let words = self.repeated(&rest[..2], 2);
            self.push_chunk(words);
            let words = self.repeated(&rest[2..], 2);
            self.push_chunk(words);
        }
        while self.texts.len() < n {
            let planted = if self.rng.gen_bool(0.5) {
                vec![cluster.choose(self.rng).unwrap().clone()]
            } else {
                Vec::new()
            };
            self.push_chunk(planted);
        }
        terms
    }

    fn ordered(&mut self, n: usize) -> Vec<String> {
        let terms = self.pick_terms(6);
        let hub = terms[..3].to_vec();
        let words = self.repeated(&hub, 2);
        self.push_chunk(words);
        while self.texts.len() < n {
            let size = self.rng.gen_range(0..=3);
            let mut planted: Vec<String> = terms.choose_multiple(self.rng, size).cloned().collect();
            planted.sort();
            self.push_chunk(planted);
        }
        terms
    }
}

fn render(words: &[String]) -> String {
    let mut text = words.join(" ");
    text.push('.');
    text
}

/// Weights for the checked-in agent fixture: the first layer projects a query
/// embedding onto the signed hash buckets of each family vocabulary, the next
/// layers pass those three activations through, and the classifier picks the
/// family's own scorer. The regression head is constant: it predicts
/// `iterations` and `lambda` through its biases alone.
pub fn family_selector_weights(iterations: u32, lambda: f64) -> AgentWeights {
    let labels: Vec<String> = Family::ALL.iter().map(|f| f.scorer().to_string()).collect();
    let lambda_max = 0.5;
    let scale = RegressionScale {
        max_iterations: iterations.max(1) * 2,
        lambda_max,
    };
    let mut w = AgentWeights::zeros(DEFAULT_DIMS, labels, scale);
    let [d0, d1, d2, _] = DEFAULT_DIMS;
    for (row, family) in Family::ALL.into_iter().enumerate() {
        let vocabulary: Vec<String> = family.vocabulary();
        let direction = embed(&tokenize(&vocabulary.join(" ")), d0);
        for (col, v) in direction.iter().enumerate() {
            w.layers[0].weights[row * d0 + col] = f64::from(*v);
        }
        w.layers[1].weights[row * d1 + row] = 1.0;
        w.layers[2].weights[row * d2 + row] = 1.0;
        w.classifier.weights[row * DEFAULT_DIMS[3] + row] = 10.0;
    }
    // sigmoid(0) * 2 * iterations = iterations.
    w.regressor.bias[0] = 0.0;
    let p = (lambda / lambda_max).clamp(1e-6, 1.0 - 1e-6);
    w.regressor.bias[1] = (p / (1.0 - p)).ln();
    w
}

/// Builds the fixture file contents: the selector weights plus one embedded
/// fixture per family computed from a representative query.
pub fn family_selector_fixture(iterations: u32, lambda: f64) -> AgentWeights {
    let mut w = family_selector_weights(iterations, lambda);
    let params = InstanceParams::default();
    for instance in generate_instances(7, 1, &params) {
        let x: Vec<f64> = instance
            .query
            .embedding
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        w.push_fixture(x).expect("fixture dimension");
    }
    w
}
