//! Exact in-memory cosine retrieval over chunk embeddings, with a compact
//! single-file binary format.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "CRGS" | version u32 | dimension u32 | count u64
//! count × ( id_len u32 | id utf-8 | text_len u32 | text utf-8
//!           | token_count u32 | dimension × f32 )
//! ```
//!
//! Records are written in ascending id order, so identical stores produce
//! identical files.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::{cosine, Chunk, Query};

const MAGIC: &[u8; 4] = b"CRGS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(
        "embedding dimension {found} does not match store dimension {expected} (chunk {id:?})"
    )]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("chunk id {0:?} already stored with different content")]
    IdConflict(String),
    #[error("not a store file (bad magic)")]
    BadMagic,
    #[error("unsupported store format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt store file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A retrieved chunk and its cosine similarity to the query.
#[derive(Debug, Clone, Copy)]
pub struct Hit<'a> {
    pub chunk: &'a Chunk,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dimension: usize,
    entries: BTreeMap<String, Chunk>,
}

impl VectorStore {
    pub fn new(dimension: usize) -> Self {
        VectorStore {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Chunk> {
        self.entries.get(id)
    }

    /// Chunks in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Chunk> {
        self.entries.values()
    }

    /// Inserts a chunk. Re-inserting an identical chunk is a no-op.
    pub fn insert(&mut self, chunk: Chunk) -> Result<(), StoreError> {
        if chunk.embedding.len() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                id: chunk.id,
                expected: self.dimension,
                found: chunk.embedding.len(),
            });
        }
        match self.entries.get(&chunk.id) {
            Some(existing) if *existing == chunk => Ok(()),
            Some(_) => Err(StoreError::IdConflict(chunk.id)),
            None => {
                self.entries.insert(chunk.id.clone(), chunk);
                Ok(())
            }
        }
    }

    /// Exact scan: the `n` most similar chunks, by descending similarity and
    /// then ascending id.
    pub fn top_n(&self, query: &Query, n: usize) -> Result<Vec<Hit<'_>>, StoreError> {
        if query.embedding.len() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                id: query.id.clone(),
                expected: self.dimension,
                found: query.embedding.len(),
            });
        }
        let mut hits: Vec<Hit<'_>> = self
            .entries
            .values()
            .map(|chunk| Hit {
                chunk,
                similarity: cosine(&chunk.embedding, &query.embedding),
            })
            .collect();
        hits.sort_by(compare_hits);
        hits.truncate(n);
        Ok(hits)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), StoreError> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.dimension as u32).to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for chunk in self.entries.values() {
            write_str(&mut out, &chunk.id)?;
            write_str(&mut out, &chunk.text)?;
            out.write_all(&chunk.token_count.to_le_bytes())?;
            for v in &chunk.embedding {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, StoreError> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic)?;
        if &magic != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = read_u32(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dimension = read_u32(&mut input)? as usize;
        let count = read_u64(&mut input)?;
        let mut store = VectorStore::new(dimension);
        for _ in 0..count {
            let id = read_string(&mut input)?;
            let text = read_string(&mut input)?;
            let token_count = read_u32(&mut input)?;
            let mut raw = vec![0u8; dimension * 4];
            read_exact(&mut input, &mut raw)?;
            let embedding = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let chunk = Chunk {
                id,
                text,
                token_count,
                embedding,
            };
            if store.entries.contains_key(&chunk.id) {
                return Err(StoreError::Corrupt(format!("duplicate id {:?}", chunk.id)));
            }
            store.insert(chunk)?;
        }
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(StoreError::Corrupt(
                "trailing bytes after last record".into(),
            ));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn write_str<W: Write>(out: &mut W, s: &str) -> io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<(), StoreError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StoreError::Corrupt("unexpected end of file".into()),
        _ => StoreError::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, StoreError> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, StoreError> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(input: &mut R) -> Result<String, StoreError> {
    let len = read_u32(input)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(input, &mut buf)?;
    String::from_utf8(buf).map_err(|_| StoreError::Corrupt("invalid utf-8 in record".into()))
}

fn compare_hits(a: &Hit<'_>, b: &Hit<'_>) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.chunk.id.cmp(&b.chunk.id))
}
