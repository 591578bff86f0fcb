//! Tokenization, chunking, deterministic embeddings and JSON-lines ingestion.
//!
//! Token counts produced here are the cost unit used everywhere else: a
//! chunk costs exactly `tokenize(text).len()` tokens.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Embedding dimension used when none is given.
pub const DEFAULT_DIMENSION: usize = 1024;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),
    #[error("chunk size must be at least 1")]
    InvalidChunkSize,
    #[error("embedding dimension must be at least 1")]
    InvalidDimension,
    #[error("{path}: line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: no records found")]
    Empty { path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered lowercase tokens of a text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

/// A contiguous block of tokens cut from one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub text: String,
    pub token_count: u32,
    pub embedding: Vec<f32>,
}

impl Chunk {
    /// Builds a chunk from free text, deriving token count and embedding.
    pub fn from_text(id: impl Into<String>, text: impl Into<String>, dimension: usize) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Chunk {
            id: id.into(),
            token_count: tokens.len() as u32,
            embedding: embed(&tokens, dimension),
            text,
        }
    }

    /// Lowercase token set of the chunk text.
    pub fn term_set(&self) -> HashSet<String> {
        tokenize(&self.text).tokens.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub embedding: Vec<f32>,
    pub relevant_terms: Option<BTreeSet<String>>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>, dimension: usize) -> Self {
        let text = text.into();
        Query {
            id: id.into(),
            embedding: embed(&tokenize(&text), dimension),
            text,
            relevant_terms: None,
        }
    }

    /// Attaches ground-truth terms; terms are lowercased to match tokens.
    pub fn with_relevant_terms<I, S>(mut self, terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.relevant_terms = Some(
            terms
                .into_iter()
                .map(|t| t.as_ref().to_lowercase())
                .collect(),
        );
        self
    }

    /// The term set synthetic scorers evaluate against: the relevant terms
    /// when present and non-empty, otherwise the query's own tokens.
    pub fn target_terms(&self) -> BTreeSet<String> {
        match &self.relevant_terms {
            Some(terms) if !terms.is_empty() => terms.clone(),
            _ => tokenize(&self.text).tokens.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Space,
    Word,
    Punct,
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphanumeric() {
        CharClass::Word
    } else {
        CharClass::Punct
    }
}

/// Byte spans of the tokens in `text`. Words are maximal alphanumeric runs,
/// punctuation tokens are maximal runs of anything that is neither
/// alphanumeric nor whitespace.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut current: Option<(usize, CharClass)> = None;
    for (i, c) in text.char_indices() {
        let class = classify(c);
        match current {
            Some((_, open)) if open == class => {}
            Some((start, _)) => {
                spans.push((start, i));
                current = (class != CharClass::Space).then_some((i, class));
            }
            None => current = (class != CharClass::Space).then_some((i, class)),
        }
    }
    if let Some((start, _)) = current {
        spans.push((start, text.len()));
    }
    spans
}

/// Splits on Unicode whitespace, separates punctuation runs into their own
/// tokens and lowercases the result.
pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence {
        tokens: token_spans(text)
            .into_iter()
            .map(|(s, e)| text[s..e].to_lowercase())
            .collect(),
    }
}

/// Whitespace word count. Never exceeds `tokenize(text).len()`.
pub fn estimate_cost(text: &str) -> usize {
    text.split_whitespace().count()
}

/// 64-bit FNV-1a over the UTF-8 bytes of `token`.
pub fn fnv1a64(token: &str) -> u64 {
    token.bytes().fold(FNV_OFFSET_BASIS, |hash, byte| {
        (hash ^ u64::from(byte)).wrapping_mul(FNV_PRIME)
    })
}

/// Signed feature hashing followed by L2 normalization.
///
/// Returns the zero vector for empty input, and also in the rare case where
/// signed bucket contributions cancel exactly.
///
/// Accumulation and normalization run in `f64`; the result is rounded to
/// `f32` once, so identical tokens give bitwise-identical vectors.
pub fn embed(tokens: &TokenSequence, dimension: usize) -> Vec<f32> {
    assert!(dimension >= 1, "embedding dimension must be at least 1");
    let mut acc = vec![0.0f64; dimension];
    for token in tokens.iter() {
        let hash = fnv1a64(token);
        let bucket = (hash % dimension as u64) as usize;
        acc[bucket] += if hash >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dimension];
    }
    acc.into_iter().map(|v| (v / norm) as f32).collect()
}

/// Dot product accumulated in `f64`. On unit vectors this is the cosine.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// Partitions every document's token stream into blocks of `chunk_size`
/// tokens (the last block may be shorter). Chunk text is the original
/// source span, so re-tokenizing it reproduces the block exactly.
pub fn chunk_corpus(
    documents: &[Document],
    chunk_size: usize,
    dimension: usize,
) -> Result<Vec<Chunk>, CorpusError> {
    if chunk_size == 0 {
        return Err(CorpusError::InvalidChunkSize);
    }
    if dimension == 0 {
        return Err(CorpusError::InvalidDimension);
    }
    let mut seen = HashSet::new();
    let mut chunks = Vec::new();
    for doc in documents {
        if !seen.insert(doc.id.as_str()) {
            return Err(CorpusError::DuplicateDocument(doc.id.clone()));
        }
        let spans = token_spans(&doc.text);
        for (index, block) in spans.chunks(chunk_size).enumerate() {
            let start = block[0].0;
            let end = block[block.len() - 1].1;
            let text = &doc.text[start..end];
            let tokens = TokenSequence {
                tokens: block
                    .iter()
                    .map(|&(s, e)| doc.text[s..e].to_lowercase())
                    .collect(),
            };
            chunks.push(Chunk {
                id: format!("{}#{}", doc.id, index),
                text: text.to_string(),
                token_count: block.len() as u32,
                embedding: embed(&tokens, dimension),
            });
        }
    }
    Ok(chunks)
}

#[derive(Deserialize)]
struct QueryRecord {
    id: String,
    text: String,
    #[serde(default)]
    relevant_terms: Option<Vec<String>>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            path: display.clone(),
            line: i + 1,
            source,
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(CorpusError::Empty { path: display });
    }
    Ok(records)
}

/// Reads a corpus file: one `{"id", "text"}` object per line.
pub fn read_documents(path: &Path) -> Result<Vec<Document>, CorpusError> {
    read_jsonl(path)
}

/// Reads a query file: `{"id", "text", "relevant_terms"?}` per line.
pub fn read_queries(path: &Path, dimension: usize) -> Result<Vec<Query>, CorpusError> {
    let records: Vec<QueryRecord> = read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| {
            let query = Query::new(r.id, r.text, dimension);
            match r.relevant_terms {
                Some(terms) => query.with_relevant_terms(terms),
                None => query,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text).tokens
    }

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
        }
    }

    fn words(n: usize) -> String {
        (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn tokenize_examples() {
        assert!(toks("").is_empty());
        assert_eq!(toks("The Eiffel Tower"), ["the", "eiffel", "tower"]);
        assert_eq!(toks("height: 324m."), ["height", ":", "324m", "."]);
    }

    #[test]
    fn tokenize_keeps_punctuation_runs_together() {
        assert_eq!(toks("wait...what?!"), ["wait", "...", "what", "?!"]);
        assert_eq!(toks("\u{00a0}Ünïcode\u{2003}WORDS\t"), ["ünïcode", "words"]);
    }

    #[test]
    fn estimate_cost_examples() {
        assert_eq!(estimate_cost(""), 0);
        assert_eq!(estimate_cost("one two three"), 3);
        assert_eq!(estimate_cost("height: 324m."), 2);
        assert_eq!(tokenize("height: 324m.").len(), 4);
    }

    #[test]
    fn fnv_matches_reference_values() {
        // Reference values computed with an independent FNV-1a implementation.
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64("b"), 0xaf63df4c8601f1a5);
        assert_eq!(fnv1a64("eiffel"), 0xedcb9aa2b85b041a);
    }

    #[test]
    fn embed_examples() {
        assert!(embed(&TokenSequence::default(), 16)
            .iter()
            .all(|&v| v == 0.0));

        let single = embed(&tokenize("a"), 64);
        assert_eq!(single.iter().filter(|v| **v != 0.0).count(), 1);
        assert!((cosine(&single, &single) - 1.0).abs() < 1e-6);

        // "a" -> bucket 4 (negative), "b" -> bucket 5 (negative): (-2, -1)/sqrt(5).
        let v = embed(&tokenize("a a b"), 8);
        let expected = [0.0, 0.0, 0.0, 0.0, -0.894_427_2, -0.447_213_6, 0.0, 0.0];
        for (got, want) in v.iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "{v:?}");
        }
    }

    #[test]
    fn chunking_examples() {
        let counts = |chunks: &[Chunk]| chunks.iter().map(|c| c.token_count).collect::<Vec<_>>();

        let chunks = chunk_corpus(&[doc("d", &words(10))], 4, 8).unwrap();
        assert_eq!(counts(&chunks), [4, 4, 2]);
        assert_eq!(chunks[2].id, "d#2");

        let chunks = chunk_corpus(&[doc("d", &words(256))], 256, 8).unwrap();
        assert_eq!(counts(&chunks), [256]);

        let chunks = chunk_corpus(&[doc("x", &words(7)), doc("y", &words(5))], 3, 8).unwrap();
        assert_eq!(chunks.len(), 5);
        assert_eq!(counts(&chunks), [3, 3, 1, 3, 2]);
    }

    #[test]
    fn chunking_rejects_duplicates_and_zero_size() {
        let err = chunk_corpus(&[doc("a", "x"), doc("a", "y")], 2, 8).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateDocument(id) if id == "a"));
        assert!(matches!(
            chunk_corpus(&[doc("a", "x")], 0, 8),
            Err(CorpusError::InvalidChunkSize)
        ));
    }

    #[test]
    fn empty_document_yields_no_chunks() {
        assert!(chunk_corpus(&[doc("a", "  \n ")], 3, 8).unwrap().is_empty());
    }

    #[test]
    fn target_terms_fall_back_to_query_tokens() {
        let q = Query::new("q", "Tower height", 8);
        assert_eq!(
            q.target_terms().into_iter().collect::<Vec<_>>(),
            ["height", "tower"]
        );
        let q = q.with_relevant_terms(["Paris"]);
        assert_eq!(q.target_terms().into_iter().collect::<Vec<_>>(), ["paris"]);
        let q = Query::new("q", "tower", 8).with_relevant_terms(Vec::<String>::new());
        assert_eq!(q.target_terms().len(), 1);
    }

    #[test]
    fn reads_jsonl_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"q1\",\"text\":\"Eiffel tower\",\"relevant_terms\":[\"Tower\"]}\n\n{\"id\":\"q2\",\"text\":\"x\"}\n",
        )
        .unwrap();
        let queries = read_queries(&path, 16).unwrap();
        assert_eq!(queries.len(), 2);
        assert!(queries[0]
            .relevant_terms
            .as_ref()
            .unwrap()
            .contains("tower"));
        assert!(queries[1].relevant_terms.is_none());

        std::fs::write(&path, "{\"id\":1}\n").unwrap();
        assert!(matches!(
            read_documents(&path),
            Err(CorpusError::Parse { line: 1, .. })
        ));
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            read_documents(&path),
            Err(CorpusError::Empty { .. })
        ));
    }

    proptest! {
        #[test]
        fn estimate_never_exceeds_exact(text in "\\PC{0,80}") {
            prop_assert!(estimate_cost(&text) <= tokenize(&text).len());
        }

        #[test]
        fn chunk_round_trip(text in "[a-zA-Z0-9 .,;:!?'\\n-]{0,200}", size in 1usize..9) {
            let chunks = chunk_corpus(&[doc("d", &text)], size, 16).unwrap();
            let mut joined = Vec::new();
            for c in &chunks {
                let t = tokenize(&c.text);
                prop_assert_eq!(t.len(), c.token_count as usize);
                prop_assert!(c.token_count as usize <= size);
                joined.extend(t.tokens);
            }
            prop_assert_eq!(joined, tokenize(&text).tokens);
        }

        #[test]
        fn embeddings_are_unit_or_zero(text in "\\PC{0,60}", dim in 1usize..64) {
            let tokens = tokenize(&text);
            let v = embed(&tokens, dim);
            let norm = cosine(&v, &v).sqrt();
            // Signed hashing can cancel exactly; only then may a non-empty
            // token sequence embed to zero.
            let mut counts = vec![0i64; dim];
            for t in tokens.iter() {
                let h = fnv1a64(t);
                counts[(h % dim as u64) as usize] += if h >> 63 == 0 { 1 } else { -1 };
            }
            if counts.iter().all(|&c| c == 0) {
                prop_assert_eq!(norm, 0.0);
            } else {
                prop_assert!((norm - 1.0).abs() < 1e-6);
            }
            prop_assert_eq!(v, embed(&tokens, dim));
        }
    }
}
