//! LLM access: an OpenAI-compatible HTTP backend, a deterministic mock,
//! a content-addressed response cache and a bounded-concurrency client.

mod cache;
mod client;
mod http;
mod mock;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::ResponseCache;
pub use client::{BatchResponses, CallStats, LlmClient};
pub use http::HttpBackend;
pub use mock::MockBackend;

pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_TEMPERATURE: f32 = 0.1;
pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const DEFAULT_MAX_CONCURRENT: usize = 20;
pub const DEFAULT_RETRY_LIMIT: u32 = 3;
pub const API_KEY_ENV: &str = "KEC_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "KEC_LLM_BASE_URL";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Concept,
    UniAttr,
    BiAttr,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Concept => "concept",
            TemplateId::UniAttr => "uni_attr",
            TemplateId::BiAttr => "bi_attr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template_id: TemplateId,
    pub rendered_prompt: String,
    pub model: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl PromptRequest {
    pub fn new(template_id: TemplateId, rendered_prompt: impl Into<String>) -> Self {
        PromptRequest {
            template_id,
            rendered_prompt: rendered_prompt.into(),
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.rendered_prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 over template id, model, temperature and prompt.
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.template_id.as_str().as_bytes());
        h.update([0]);
        h.update(self.model.as_bytes());
        h.update([0]);
        h.update(self.temperature.to_bits().to_le_bytes());
        h.update([0]);
        h.update(self.rendered_prompt.as_bytes());
        hex::encode(h.finalize())
    }

    /// Hex SHA-256 of the rendered prompt alone.
    pub fn prompt_hash(&self) -> String {
        sha256_hex(self.rendered_prompt.as_bytes())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub cached: bool,
    pub latency_ms: u64,
    /// 1-based attempt that succeeded; 0 for cache hits.
    pub attempt: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: String,
    pub api_key_env_name: String,
    pub max_concurrent: usize,
    /// Retries after the first attempt for retryable failures.
    pub retry_limit: u32,
    pub cache_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    /// Base delay of the exponential backoff between attempts.
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "https://api.openai.com".to_string(),
            api_key_env_name: API_KEY_ENV.to_string(),
            max_concurrent: DEFAULT_MAX_CONCURRENT,
            retry_limit: DEFAULT_RETRY_LIMIT,
            cache_dir: None,
            timeout_secs: 120,
            backoff_ms: 500,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_concurrent == 0 {
            return Err(LlmError::InvalidRequest("max_concurrent must be >= 1".into()));
        }
        Ok(())
    }
}

/// Failure reported by a backend for a single attempt.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("retryable: {0}")]
    Retryable(String),
    #[error("http {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("{0}")]
    Fatal(String),
}

/// A single-shot completion provider. Retries, caching and concurrency
/// bounds are layered on top by [`LlmClient`].
pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError>;

    /// Short identifier recorded in logs.
    fn name(&self) -> &str {
        "backend"
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("batch had {} failed requests (indices {:?})", failed.len(), failed.iter().map(|f| f.0).collect::<Vec<_>>())]
    Batch { failed: Vec<(usize, String)> },
}
