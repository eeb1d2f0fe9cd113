//! The retriever: BM25 sparse index, flat dense index with cosine
//! similarity, and the temperature-softmax retrieval likelihood.

pub mod bm25;
pub mod dense;

use serde::{Deserialize, Serialize};

use crate::error::{FairRagError, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub top_k: usize,
    pub gamma: f64,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            gamma: 0.1,
            bm25_k1: 1.2,
            bm25_b: 0.75,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(FairRagError::EmptyInput("top_k must be >= 1"));
        }
        if !(self.gamma > 0.0) {
            return Err(FairRagError::NonFinite("gamma must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.bm25_b) {
            return Err(FairRagError::NonFinite("bm25_b must be in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Bm25,
    Dense,
}

/// Top-k result list, sorted by score descending with ties broken by
/// chunk_id lexicographic order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
    pub retriever_kind: RetrieverKind,
}

impl RetrievedSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn chunk_ids(&self) -> Vec<String> {
        self.entries.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|&(_, s)| s).collect()
    }
}

/// Normalized weights over a retrieved set; houses both the retrieval
/// likelihood and the LLM fairness score distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbabilityDistribution {
    pub support: Vec<String>,
    pub weights: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.support.len() != self.weights.len() {
            return Err(FairRagError::SupportMismatch);
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(FairRagError::NonFinite("probability weights"));
        }
        Ok(())
    }
}

/// Temperature softmax in log space with max subtraction.
pub fn softmax_with_temperature(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(FairRagError::EmptyInput("softmax over empty scores"));
    }
    if !(temperature > 0.0) {
        return Err(FairRagError::NonFinite("softmax temperature"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FairRagError::NonFinite("softmax score"));
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Softmax over the set's similarity scores at temperature `gamma`.
pub fn retrieval_likelihood(set: &RetrievedSet, gamma: f64) -> Result<ProbabilityDistribution> {
    if set.is_empty() {
        return Err(FairRagError::EmptyInput("retrieval_likelihood on empty set"));
    }
    let weights = softmax_with_temperature(&set.scores(), gamma)?;
    Ok(ProbabilityDistribution {
        support: set.chunk_ids(),
        weights,
    })
}

/// Sorts (id, score) pairs by score descending, id ascending, and truncates
/// to k. Shared by both retrievers so tie-breaking is identical.
pub(crate) fn rank_and_truncate(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}
