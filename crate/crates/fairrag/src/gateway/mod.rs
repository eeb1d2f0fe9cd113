//! Gateway over the language model: chat generation, target-sequence
//! log-probability scoring, and text embedding. Backed by an HTTP
//! chat-completion endpoint or a deterministic in-process mock.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};

use crate::error::{FairRagError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 128,
            model_name: "default".into(),
        }
    }
}

/// Per-token mean log-probability of a target sequence given a context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredTarget {
    pub avg_logprob: f64,
    pub token_count: usize,
}

impl ScoredTarget {
    pub fn validate(&self) -> Result<()> {
        if self.token_count < 1 {
            return Err(FairRagError::EmptyInput("scored target token count"));
        }
        if !self.avg_logprob.is_finite() || self.avg_logprob > 0.0 {
            return Err(FairRagError::NonFinite("avg_logprob must be finite and <= 0"));
        }
        Ok(())
    }
}

/// The model is never updated through this interface; scoring the same
/// (context, target) twice yields identical results.
pub trait LlmGateway: Send + Sync {
    fn generate(&self, context: &str, params: &GenerationParams) -> Result<String>;
    fn score_target(&self, context: &str, target: &str) -> Result<ScoredTarget>;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    fn embed_dim(&self) -> usize;
}

/// Bounded in-flight counter used by backends that talk to rate-limited
/// providers.
pub(crate) struct InFlightLimit {
    state: std::sync::Mutex<usize>,
    cond: std::sync::Condvar,
    max: usize,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            state: std::sync::Mutex::new(0),
            cond: std::sync::Condvar::new(),
            max: max.max(1),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut count = self.state.lock().unwrap();
        while *count >= self.max {
            count = self.cond.wait(count).unwrap();
        }
        *count += 1;
        InFlightGuard { limit: self }
    }
}

pub(crate) struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.limit.state.lock().unwrap();
        *count -= 1;
        self.limit.cond.notify_one();
    }
}
