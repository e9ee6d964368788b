//! Endpoint bindings and the JSON wire contracts.
//!
//! `base_url` is the API root including any version prefix (for example
//! `http://localhost:8000/v1`). Four routes hang off it:
//!
//! | route               | request                                        | response |
//! |---------------------|------------------------------------------------|----------|
//! | `/chat/completions` | [`ChatRequest`] (OpenAI-compatible)            | [`ChatResponse`] |
//! | `/score`            | [`ScoreRequest`]: prompt + continuation        | [`ScoreResponse`]: per-token natural-log probabilities |
//! | `/reward`           | [`RewardRequest`]: batch of (prompt, response) | [`RewardResponse`]: one scalar per item, in order |
//! | `/embeddings`       | [`EmbeddingRequest`] (OpenAI-compatible)       | [`EmbeddingResponse`] |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHAT_ROUTE: &str = "/chat/completions";
pub const SCORE_ROUTE: &str = "/score";
pub const REWARD_ROUTE: &str = "/reward";
pub const EMBEDDINGS_ROUTE: &str = "/embeddings";

fn default_timeout_secs() -> f64 {
    120.0
}

fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointBinding {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_ref: Option<String>,
    pub model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Per-endpoint override of the generation token budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl EndpointBinding {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_ref: None,
            model_name: model_name.into(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let url = url::Url::parse(&self.base_url)
            .map_err(|e| Error::InvalidConfig(format!("base_url `{}`: {e}", self.base_url)))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(Error::InvalidConfig(format!("base_url `{}` must be http(s)", self.base_url)));
        }
        if self.model_name.is_empty() {
            return Err(Error::InvalidConfig("endpoint model_name is empty".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig(format!("timeout_secs {} must be > 0", self.timeout_secs)));
        }
        Ok(())
    }

    pub fn url(&self, route: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), route)
    }

    /// Admission-control key: one limit per (server, model).
    pub fn key(&self) -> String {
        format!("{}#{}", self.base_url.trim_end_matches('/'), self.model_name)
    }

    pub fn api_key(&self) -> Result<Option<String>> {
        match &self.api_key_ref {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("credential variable `{var}` is not set"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub index: u32,
    pub message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model: String,
    pub prompt: String,
    pub continuation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub text: String,
    /// Natural-log probability; may be null for prompt tokens.
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    /// Number of leading tokens that belong to the prompt.
    pub prompt_tokens: usize,
    pub tokens: Vec<ScoredToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardItem {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRequest {
    pub model: String,
    pub items: Vec<RewardItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub model: String,
    pub input: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingData {
    pub index: usize,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub data: Vec<EmbeddingData>,
}
