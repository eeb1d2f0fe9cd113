//! Flat dense vector index: exhaustive cosine scan with an optional
//! linear transform on both sides.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{FairRagError, Result};
use crate::retrieval::{rank_and_truncate, RetrievedSet, RetrieverKind};
use crate::transform::QueryTransform;
use crate::util::atomic_write;

const MAGIC: &[u8; 4] = b"FREM";
const VERSION: u32 = 1;

/// Precomputed chunk embeddings. Vectors are kept in f64 for training math;
/// the on-disk format stores little-endian f32 per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(FairRagError::ZeroNormVector);
    }
    Ok(dot(a, b) / (na * nb))
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, chunk_id: String, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(FairRagError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(FairRagError::NonFinite("embedding vector"));
        }
        self.vectors.insert(chunk_id, vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Binary layout: magic, version, dim (u32), count (u64), then repeated
    /// (u32 id length, UTF-8 id, dim little-endian f32).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.vectors.len() as u64).to_le_bytes());
        for (id, vec) in &self.vectors {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for x in vec {
                buf.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(FairRagError::MissingFile(path.to_path_buf()));
        }
        let bad = |detail: &str| FairRagError::BadFormat {
            path: path.to_path_buf(),
            detail: detail.into(),
        };
        let mut reader = BufReader::new(File::open(path)?);
        let mut head = [0u8; 20];
        reader.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if u32::from_le_bytes(head[4..8].try_into().unwrap()) != VERSION {
            return Err(bad("unsupported version"));
        }
        let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
        let mut store = Self::new(dim);
        for _ in 0..count {
            let mut len_buf = [0u8; 4];
            reader.read_exact(&mut len_buf).map_err(|_| bad("truncated record"))?;
            let id_len = u32::from_le_bytes(len_buf) as usize;
            let mut id_bytes = vec![0u8; id_len];
            reader.read_exact(&mut id_bytes).map_err(|_| bad("truncated id"))?;
            let id = String::from_utf8(id_bytes).map_err(|_| bad("non-utf8 id"))?;
            let mut vec_bytes = vec![0u8; dim * 4];
            reader.read_exact(&mut vec_bytes).map_err(|_| bad("truncated vector"))?;
            let vector = vec_bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            store.insert(id, vector)?;
        }
        Ok(store)
    }
}

/// Exhaustive cosine top-k over the store. When a transform is given it is
/// applied to both the query and every document vector.
pub fn dense_search(
    emb: &EmbeddingStore,
    query_vec: &[f64],
    k: usize,
    transform: Option<&QueryTransform>,
) -> Result<RetrievedSet> {
    if query_vec.len() != emb.dim {
        return Err(FairRagError::DimensionMismatch {
            expected: emb.dim,
            got: query_vec.len(),
        });
    }
    let q = match transform {
        Some(t) => t.apply(query_vec),
        None => query_vec.to_vec(),
    };
    if norm(&q) == 0.0 {
        return Err(FairRagError::ZeroNormVector);
    }
    let mut scored = Vec::with_capacity(emb.len());
    for (id, vec) in &emb.vectors {
        let d = match transform {
            Some(t) => t.apply(vec),
            None => vec.clone(),
        };
        scored.push((id.clone(), cosine(&q, &d)?));
    }
    Ok(RetrievedSet {
        query_id: String::new(),
        entries: rank_and_truncate(scored, k),
        retriever_kind: RetrieverKind::Dense,
    })
}
