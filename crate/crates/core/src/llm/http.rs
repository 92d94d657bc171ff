use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, BackendError, LlmBackend, LlmError, PromptRequest, BASE_URL_ENV};

/// OpenAI-compatible chat completions over HTTP.
///
/// Sends `POST {base_url}/v1/chat/completions` with a single user message
/// and reads the first choice's message content.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    /// Builds a backend from config. `KEC_LLM_BASE_URL` overrides the
    /// configured base URL; the API key comes only from the environment
    /// variable named in the config.
    pub fn from_config(config: &BackendConfig) -> Result<Self, LlmError> {
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| config.base_url.clone());
        let api_key = std::env::var(&config.api_key_env_name)
            .ok()
            .filter(|k| !k.is_empty());
        Self::new(&base, api_key, Duration::from_secs(config.timeout_secs))
    }

    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Backend(format!("http client: {e}")))?;
        Ok(HttpBackend {
            client,
            endpoint: format!("{}/v1/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

/// Request body for a chat completion.
pub(crate) fn request_body(request: &PromptRequest) -> Value {
    json!({
        "model": request.model,
        "messages": [{"role": "user", "content": request.rendered_prompt}],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

/// Extracts `choices[0].message.content`.
pub(crate) fn response_text(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Retryable(format!("malformed response body: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Retryable("response has no choices[0].message.content".into()))
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let mut builder = self
            .client
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .body(request_body(request).to_string());
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| BackendError::Retryable(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| BackendError::Retryable(format!("reading body: {e}")))?;
        match status {
            200..=299 => response_text(&body),
            // rate limiting and request timeouts clear up on their own
            408 | 429 => Err(BackendError::Retryable(format!("http {status}"))),
            400..=499 => Err(BackendError::Rejected { status, body }),
            _ => Err(BackendError::Retryable(format!("http {status}"))),
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}
