//! HTTP chat-completion backend with bounded retries.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{FairRagError, Result};
use crate::gateway::{GenerationParams, InFlightLimit, LlmGateway, ScoredTarget};

pub const ENV_URL: &str = "FAIRRAG_LLM_URL";
pub const ENV_KEY: &str = "FAIRRAG_LLM_KEY";

const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone)]
pub struct HttpGatewayConfig {
    pub url: String,
    pub api_key: Option<String>,
    /// Endpoint advertises the target-scoring contract (see README).
    pub supports_logprobs: bool,
    pub embed_dim: usize,
    pub max_in_flight: usize,
    pub backoff_base: Duration,
}

impl HttpGatewayConfig {
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| FairRagError::EmptyInput("FAIRRAG_LLM_URL not set"))?;
        Ok(Self {
            url,
            api_key: std::env::var(ENV_KEY).ok(),
            supports_logprobs: false,
            embed_dim: 0,
            max_in_flight: 4,
            backoff_base: Duration::from_millis(250),
        })
    }
}

pub struct HttpGateway {
    config: HttpGatewayConfig,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct ScoreResponse {
    avg_logprob: f64,
    token_count: usize,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    embedding: Vec<f64>,
}

impl HttpGateway {
    pub fn new(config: HttpGatewayConfig) -> Self {
        let limit = InFlightLimit::new(config.max_in_flight);
        Self {
            config,
            client: reqwest::blocking::Client::new(),
            limit,
        }
    }

    /// Retries transport failures with exponential backoff; any HTTP error
    /// status is terminal.
    fn post(&self, body: serde_json::Value) -> Result<serde_json::Value> {
        let _guard = self.limit.acquire();
        let mut last_err = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            let mut req = self.client.post(&self.config.url).json(&body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if !status.is_success() {
                        return Err(FairRagError::Provider {
                            status: status.as_u16(),
                            message: resp.text().unwrap_or_default(),
                        });
                    }
                    return Ok(resp.json().map_err(|e| FairRagError::Transport {
                        attempts: attempt + 1,
                        message: format!("bad response body: {e}"),
                    })?);
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(FairRagError::Transport {
            attempts: MAX_ATTEMPTS,
            message: last_err,
        })
    }
}

impl LlmGateway for HttpGateway {
    fn generate(&self, context: &str, params: &GenerationParams) -> Result<String> {
        if context.is_empty() {
            return Err(FairRagError::EmptyInput("generate context"));
        }
        let body = json!({
            "model": params.model_name,
            "messages": [{"role": "user", "content": context}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "logprobs": false,
        });
        let value = self.post(body)?;
        let parsed: ChatResponse = serde_json::from_value(value)?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or(FairRagError::EmptyInput("chat response had no choices"))?;
        if choice.finish_reason.as_deref() == Some("length") {
            // truncation at max_tokens is surfaced to the caller's logs
            eprintln!("warning: completion truncated at max_tokens");
        }
        Ok(choice.message.content)
    }

    fn score_target(&self, context: &str, target: &str) -> Result<ScoredTarget> {
        if target.is_empty() {
            return Err(FairRagError::EmptyInput("score_target target"));
        }
        if !self.config.supports_logprobs {
            return Err(FairRagError::NoLogprobSupport);
        }
        let body = json!({
            "mode": "score_target",
            "context": context,
            "target": target,
            "logprobs": true,
        });
        let value = self.post(body)?;
        let parsed: ScoreResponse = serde_json::from_value(value)?;
        let scored = ScoredTarget {
            avg_logprob: parsed.avg_logprob,
            token_count: parsed.token_count,
        };
        scored.validate()?;
        Ok(scored)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.is_empty() {
            return Err(FairRagError::EmptyInput("embed text"));
        }
        let body = json!({"mode": "embed", "input": text});
        let value = self.post(body)?;
        let parsed: EmbedResponse = serde_json::from_value(value)?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|i| i.embedding)
            .ok_or(FairRagError::EmptyInput("embedding response had no data"))
    }

    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }
}
