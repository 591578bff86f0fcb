//! Budget-constrained search for the best ordered combination of retrieved
//! text chunks.
//!
//! The pipeline: chunk and embed a corpus ([`corpus`]), retrieve candidates
//! ([`vector_store`]), search the policy tree of ordered combinations under a
//! token budget ([`mcts`]) against a pluggable batch value function
//! ([`scorer`]), and compare against greedy and exhaustive baselines
//! ([`baselines`]).

pub mod agent;
pub mod baselines;
pub mod bench;
pub mod corpus;
pub mod instances;
pub mod mcts;
pub mod scorer;
pub mod vector_store;

pub use baselines::{exhaustive_oracle, greedy_topk};
pub use corpus::{
    chunk_corpus, embed, estimate_cost, tokenize, Chunk, Document, Query, TokenSequence,
};
pub use mcts::{
    node_utility, search, Extraction, PolicyTree, PolicyTreeNode, SearchConfig, SearchResult,
};
pub use scorer::{scorer_by_name, CandidatePool, Combination, ScorerParams, UtilityScorer};
pub use vector_store::VectorStore;
