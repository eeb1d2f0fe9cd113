//! Deterministic in-process mock model: the whole test suite runs with
//! zero network access.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{FairRagError, Result};
use crate::gateway::{GenerationParams, LlmGateway, ScoredTarget};

pub const DEFAULT_YES: &str = "Yes. Given the context this opinion appears supported.";
pub const DEFAULT_NO: &str = "No. The statement is a harmful stereotype and I disagree.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    StanceByMarker,
    OverlapScorer,
    FixedJson,
}

/// Mock behavior loaded from a JSON spec file. Generation follows `mode`,
/// except that prompts matching a filter template are answered from the
/// verdict tables when those are present. Target scoring is always the
/// overlap rule; embeddings are a feature hash of token counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockLlmSpec {
    pub mode: MockMode,
    #[serde(default)]
    pub markers: Vec<String>,
    #[serde(default = "default_yes")]
    pub yes_response: String,
    #[serde(default = "default_no")]
    pub no_response: String,
    #[serde(default)]
    pub fixed_response: String,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Fairness-filter verdicts: document substring -> Pass value.
    #[serde(default)]
    pub fairness_verdicts: BTreeMap<String, bool>,
    #[serde(default = "default_true")]
    pub fairness_default: bool,
    /// Utility-filter verdicts: document substring -> Pass value.
    #[serde(default)]
    pub utility_verdicts: BTreeMap<String, bool>,
    #[serde(default)]
    pub utility_default: bool,
}

fn default_yes() -> String {
    DEFAULT_YES.into()
}

fn default_no() -> String {
    DEFAULT_NO.into()
}

fn default_embed_dim() -> usize {
    64
}

fn default_true() -> bool {
    true
}

impl Default for MockLlmSpec {
    fn default() -> Self {
        Self {
            mode: MockMode::StanceByMarker,
            markers: Vec::new(),
            yes_response: default_yes(),
            no_response: default_no(),
            fixed_response: String::new(),
            embed_dim: default_embed_dim(),
            fairness_verdicts: BTreeMap::new(),
            fairness_default: true,
            utility_verdicts: BTreeMap::new(),
            utility_default: false,
        }
    }
}

pub struct MockLlm {
    spec: MockLlmSpec,
}

const FAIRNESS_FILTER_PREFIX: &str = "You are a fairness evaluation model.";
const UTILITY_FILTER_PREFIX: &str = "You are a relevance evaluation model.";

impl MockLlm {
    pub fn new(spec: MockLlmSpec) -> Self {
        Self { spec }
    }

    pub fn from_spec_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(FairRagError::MissingFile(path.to_path_buf()));
        }
        let spec: MockLlmSpec = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Ok(Self::new(spec))
    }

    fn filter_verdict(&self, context: &str, table: &BTreeMap<String, bool>, default: bool) -> String {
        let document = extract_document(context).unwrap_or(context);
        let pass = table
            .iter()
            .find(|(needle, _)| document.contains(needle.as_str()))
            .map(|(_, v)| *v)
            .unwrap_or(default);
        format!("{{\"Pass\": {pass}}}")
    }
}

/// Pulls the `### Document:` section out of a filter prompt.
fn extract_document(context: &str) -> Option<&str> {
    let start = context.find("### Document:")? + "### Document:".len();
    let rest = &context[start..];
    let end = rest.find("### Response").unwrap_or(rest.len());
    Some(rest[..end].trim())
}

/// FNV-1a, fixed here so embeddings are stable across platforms and builds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl LlmGateway for MockLlm {
    fn generate(&self, context: &str, _params: &GenerationParams) -> Result<String> {
        if context.is_empty() {
            return Err(FairRagError::EmptyInput("generate context"));
        }
        if self.spec.mode != MockMode::FixedJson {
            if context.starts_with(FAIRNESS_FILTER_PREFIX) {
                return Ok(self.filter_verdict(
                    context,
                    &self.spec.fairness_verdicts,
                    self.spec.fairness_default,
                ));
            }
            if context.starts_with(UTILITY_FILTER_PREFIX) {
                return Ok(self.filter_verdict(
                    context,
                    &self.spec.utility_verdicts,
                    self.spec.utility_default,
                ));
            }
        }
        match self.spec.mode {
            MockMode::FixedJson => Ok(self.spec.fixed_response.clone()),
            MockMode::StanceByMarker | MockMode::OverlapScorer => {
                let agree = self.spec.markers.iter().any(|m| context.contains(m.as_str()));
                Ok(if agree {
                    self.spec.yes_response.clone()
                } else {
                    self.spec.no_response.clone()
                })
            }
        }
    }

    /// Overlap rule: avg_logprob = -(1 - f) where f is the fraction of target
    /// tokens present in the context; full overlap maps to -1e-6 so the
    /// score stays strictly below zero.
    fn score_target(&self, context: &str, target: &str) -> Result<ScoredTarget> {
        let target_tokens = tokenize(target);
        if target_tokens.is_empty() {
            return Err(FairRagError::EmptyInput("score_target target"));
        }
        let context_tokens: HashSet<String> = tokenize(context).into_iter().collect();
        let present = target_tokens
            .iter()
            .filter(|t| context_tokens.contains(*t))
            .count();
        let fraction = present as f64 / target_tokens.len() as f64;
        let avg_logprob = if fraction >= 1.0 { -1e-6 } else { -(1.0 - fraction) };
        let scored = ScoredTarget {
            avg_logprob,
            token_count: target_tokens.len(),
        };
        scored.validate()?;
        Ok(scored)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.is_empty() {
            return Err(FairRagError::EmptyInput("embed text"));
        }
        let dim = self.spec.embed_dim;
        let mut vec = vec![0.0f64; dim];
        for token in tokenize(text) {
            let bucket = (fnv1a(token.as_bytes()) % dim as u64) as usize;
            // sign from a second hash bit spreads mass over both half-axes
            let sign = if fnv1a(token.as_bytes()) & (1 << 32) == 0 { 1.0 } else { -1.0 };
            vec[bucket] += sign;
        }
        let norm: f64 = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            vec[0] = 1.0;
            return Ok(vec);
        }
        Ok(vec.into_iter().map(|x| x / norm).collect())
    }

    fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }
}
