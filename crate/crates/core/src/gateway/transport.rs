//! Wire transports.

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{ChatRequest, ChatResponse, ModelEndpoint, TransportError};

/// A way to deliver one chat request. Implementations must be safe to
/// call concurrently; the gateway handles retries and concurrency
/// limits above this layer.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(
        &self,
        endpoint: &ModelEndpoint,
        request: &ChatRequest,
    ) -> Result<ChatResponse, TransportError>;
}

/// Chat-completions JSON over HTTP(S). API keys are read from the
/// endpoint's `OMNI_API_KEY_<NAME>` environment variable when present.
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self { client: reqwest::Client::new() }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Deserialize)]
struct CompletionsBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: String,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(
        &self,
        endpoint: &ModelEndpoint,
        request: &ChatRequest,
    ) -> Result<ChatResponse, TransportError> {
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let body = json!({
            "model": endpoint.model_id,
            "messages": messages,
            "temperature": request.temperature.unwrap_or(endpoint.temperature),
            "max_tokens": request.max_tokens.unwrap_or(endpoint.max_output_tokens),
        });

        let mut http = self.client.post(&url).json(&body);
        if let Ok(key) = std::env::var(endpoint.api_key_env_var()) {
            if !key.is_empty() {
                http = http.bearer_auth(key);
            }
        }

        let response = http.send().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(endpoint.timeout())
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;

        let status = response.status();
        if status.as_u16() == 429 {
            return Err(TransportError::RateLimited(status.to_string()));
        }
        if status.is_server_error() {
            return Err(TransportError::Server(status.to_string()));
        }
        if status.is_client_error() {
            let detail = response.text().await.unwrap_or_default();
            return Err(TransportError::Client(format!("{status}: {detail}")));
        }

        let body: CompletionsBody = response
            .json()
            .await
            .map_err(|e| TransportError::InvalidResponse(e.to_string()))?;
        let choice = body
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::InvalidResponse("no choices in response".into()))?;
        let usage = body.usage.unwrap_or_default();
        Ok(ChatResponse {
            text: choice.message.content,
            finish_reason: choice.finish_reason,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}
