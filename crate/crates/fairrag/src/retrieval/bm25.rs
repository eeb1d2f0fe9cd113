//! Okapi BM25 inverted index over a chunk store.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, ChunkStore};
use crate::error::{FairRagError, Result};
use crate::retrieval::{rank_and_truncate, RetrievedSet, RetrieverKind};
use crate::util::atomic_write;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    pub k1: f64,
    pub b: f64,
    pub doc_count: usize,
    pub avg_len: f64,
    /// chunk_id -> token count
    pub lengths: BTreeMap<String, usize>,
    /// term -> postings (chunk_id, term frequency)
    pub postings: BTreeMap<String, Vec<(String, usize)>>,
}

pub fn bm25_build(store: &ChunkStore, k1: f64, b: f64) -> Result<Bm25Index> {
    if store.is_empty() {
        return Err(FairRagError::EmptyStore);
    }
    let mut lengths = BTreeMap::new();
    let mut postings: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    for chunk in &store.chunks {
        let tokens = tokenize(&chunk.text);
        lengths.insert(chunk.chunk_id.clone(), tokens.len());
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        for (term, count) in tf {
            postings
                .entry(term.to_string())
                .or_default()
                .push((chunk.chunk_id.clone(), count));
        }
    }
    let doc_count = lengths.len();
    let avg_len = lengths.values().sum::<usize>() as f64 / doc_count as f64;
    Ok(Bm25Index {
        k1,
        b,
        doc_count,
        avg_len,
        lengths,
        postings,
    })
}

impl Bm25Index {
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, |p| p.len())
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count as f64;
        (((n - df as f64 + 0.5) / (df as f64 + 0.5)) + 1.0).ln()
    }

    pub fn score_term(&self, tf: usize, df: usize, doc_len: usize) -> f64 {
        let tf = tf as f64;
        let norm = self.k1 * (1.0 - self.b + self.b * doc_len as f64 / self.avg_len);
        self.idf(df) * tf * (self.k1 + 1.0) / (tf + norm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(FairRagError::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

pub fn bm25_search(index: &Bm25Index, query: &str, k: usize) -> RetrievedSet {
    let terms = tokenize(query);
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for term in &terms {
        if let Some(postings) = index.postings.get(term) {
            let df = postings.len();
            for (chunk_id, tf) in postings {
                let len = index.lengths[chunk_id];
                *scores.entry(chunk_id.as_str()).or_default() +=
                    index.score_term(*tf, df, len);
            }
        }
    }
    let scored: Vec<(String, f64)> = scores
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect();
    RetrievedSet {
        query_id: query.to_string(),
        entries: rank_and_truncate(scored, k),
        retriever_kind: RetrieverKind::Bm25,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Chunk, ChunkerConfig};

    pub(crate) fn store_from_texts(texts: &[&str]) -> ChunkStore {
        let chunks = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                chunk_id: format!("c{i:03}"),
                doc_id: format!("d{i:03}"),
                token_span: (0, tokenize(t).len()),
                text: t.to_string(),
                token_count: tokenize(t).len(),
            })
            .collect();
        ChunkStore::from_chunks(chunks, ChunkerConfig::default())
    }

    // Naive full-scan oracle: score every chunk against the query directly
    // from raw texts, no inverted index.
    pub(crate) fn bm25_oracle(
        texts: &[(String, String)],
        query: &str,
        k1: f64,
        b: f64,
        k: usize,
    ) -> Vec<(String, f64)> {
        let n = texts.len() as f64;
        let token_lists: Vec<(String, Vec<String>)> = texts
            .iter()
            .map(|(id, t)| (id.clone(), tokenize(t)))
            .collect();
        let avg = token_lists.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
        let qterms = tokenize(query);
        let mut scored = Vec::new();
        for (id, toks) in &token_lists {
            let mut s = 0.0;
            for term in &qterms {
                let tf = toks.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = token_lists
                    .iter()
                    .filter(|(_, other)| other.contains(term))
                    .count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks.len() as f64 / avg));
            }
            if s > 0.0 {
                scored.push((id.clone(), s));
            }
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        scored
    }

    #[test]
    fn document_frequencies() {
        let store = store_from_texts(&["cat sat", "dog sat"]);
        let idx = bm25_build(&store, 1.2, 0.75).unwrap();
        assert_eq!(idx.df("sat"), 2);
        assert_eq!(idx.df("cat"), 1);
        assert_eq!(idx.df("zzz"), 0);
    }

    #[test]
    fn single_chunk_avg_len() {
        let store = store_from_texts(&["one two three"]);
        let idx = bm25_build(&store, 1.2, 0.75).unwrap();
        assert_eq!(idx.avg_len, 3.0);
    }

    #[test]
    fn build_is_deterministic() {
        let store = store_from_texts(&["cat sat", "dog sat"]);
        let a = serde_json::to_string(&bm25_build(&store, 1.2, 0.75).unwrap()).unwrap();
        let b = serde_json::to_string(&bm25_build(&store, 1.2, 0.75).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn search_matches_oracle_on_toy_corpus() {
        let store = store_from_texts(&["cat sat", "dog sat"]);
        let idx = bm25_build(&store, 1.2, 0.75).unwrap();
        let result = bm25_search(&idx, "cat", 1);
        assert_eq!(result.entries.len(), 1);
        assert_eq!(result.entries[0].0, "c000");
        let texts = vec![
            ("c000".to_string(), "cat sat".to_string()),
            ("c001".to_string(), "dog sat".to_string()),
        ];
        let oracle = bm25_oracle(&texts, "cat", 1.2, 0.75, 1);
        assert_eq!(result.entries[0].0, oracle[0].0);
        assert!((result.entries[0].1 - oracle[0].1).abs() < 1e-12);
    }

    #[test]
    fn no_match_empty_result() {
        let store = store_from_texts(&["cat sat", "dog sat"]);
        let idx = bm25_build(&store, 1.2, 0.75).unwrap();
        assert!(bm25_search(&idx, "zzz", 3).is_empty());
    }

    #[test]
    fn k_larger_than_corpus() {
        let store = store_from_texts(&["cat sat", "dog sat"]);
        let idx = bm25_build(&store, 1.2, 0.75).unwrap();
        assert_eq!(bm25_search(&idx, "sat", 100).len(), 2);
    }

    #[test]
    fn empty_store_rejected() {
        let store = ChunkStore::from_chunks(vec![], ChunkerConfig::default());
        assert!(matches!(
            bm25_build(&store, 1.2, 0.75),
            Err(FairRagError::EmptyStore)
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let store = store_from_texts(&["cat sat on the mat", "dog sat"]);
        let idx = bm25_build(&store, 1.2, 0.75).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.json");
        idx.save(&path).unwrap();
        let loaded = Bm25Index::load(&path).unwrap();
        let a = bm25_search(&idx, "cat mat", 5);
        let b = bm25_search(&loaded, "cat mat", 5);
        assert_eq!(a.entries, b.entries);
    }
}
