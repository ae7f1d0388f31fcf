//! Uniform client for all remote model calls.
//!
//! Every generation and judging call goes through [`Gateway::complete`],
//! which enforces a per-endpoint concurrency bound, applies timeouts and
//! the endpoint's retry policy, and optionally journals raw
//! request/response pairs. The wire protocol lives behind the
//! [`Transport`] trait: [`HttpTransport`] speaks the common
//! chat-completions JSON shape, [`MockTransport`] replays a script for
//! tests and offline runs.

mod mock;
mod transport;

pub use mock::{MockResponse, MockRule, MockScript, MockTransport};
pub use transport::{HttpTransport, Transport};

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

/// Retry schedule for one endpoint. Backoff delays are
/// `initial_backoff_ms * backoff_multiplier^(attempt - 1)`, so a
/// multiplier >= 1 keeps them non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff_ms: 500, backoff_multiplier: 2.0 }
    }
}

impl RetryPolicy {
    /// Delay before retrying after the given 1-based failed attempt.
    pub fn backoff_after(&self, attempt: u32) -> Duration {
        let factor = self.backoff_multiplier.max(1.0).powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis((self.initial_backoff_ms as f64 * factor).round() as u64)
    }
}

/// A named remote model (teacher or judge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    pub max_concurrency: usize,
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.name.is_empty() {
            return Err(GatewayError::InvalidEndpoint("endpoint name is empty".into()));
        }
        if self.max_concurrency < 1 {
            return Err(GatewayError::InvalidEndpoint(format!(
                "{}: max_concurrency must be >= 1",
                self.name
            )));
        }
        if self.retry.max_attempts < 1 {
            return Err(GatewayError::InvalidEndpoint(format!(
                "{}: max_attempts must be >= 1",
                self.name
            )));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidEndpoint(format!(
                "{}: temperature must be >= 0",
                self.name
            )));
        }
        if self.max_output_tokens < 1 {
            return Err(GatewayError::InvalidEndpoint(format!(
                "{}: max_output_tokens must be >= 1",
                self.name
            )));
        }
        Ok(())
    }

    /// Environment variable consulted for this endpoint's API key:
    /// `OMNI_API_KEY_<NAME>` with the name uppercased and
    /// non-alphanumerics mapped to `_`.
    pub fn api_key_env_var(&self) -> String {
        let mut var = String::from("OMNI_API_KEY_");
        for c in self.name.chars() {
            if c.is_ascii_alphanumeric() {
                var.push(c.to_ascii_uppercase());
            } else {
                var.push('_');
            }
        }
        var
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// One chat call. Sampling parameters default to the endpoint's.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn user(text: impl Into<String>) -> Self {
        Self { system: None, user: text.into(), temperature: None, max_tokens: None }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    /// Text the mock transport matches rules against.
    pub fn match_text(&self) -> String {
        match &self.system {
            Some(system) => format!("{system}\n{}", self.user),
            None => self.user.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A successful call plus how many transport attempts it took.
#[derive(Debug, Clone)]
pub struct Completion {
    pub response: ChatResponse,
    pub attempts: u32,
}

/// Transport-level failure, classified for retry.
#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("server error: {0}")]
    Server(String),
    #[error("client error: {0}")]
    Client(String),
    #[error("connection error: {0}")]
    Connection(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

impl TransportError {
    /// Retryable: transient conditions. Client errors other than rate
    /// limits are not, so malformed prompts don't burn quota.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, TransportError::Client(_))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("{endpoint}: all {attempts} attempts failed: {last}")]
    Exhausted {
        endpoint: String,
        attempts: u32,
        #[source]
        last: TransportError,
    },
    #[error("{endpoint}: non-retryable: {source}")]
    NonRetryable {
        endpoint: String,
        #[source]
        source: TransportError,
    },
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    seq: u64,
    endpoint: &'a str,
    model: &'a str,
    attempts: u32,
    request: &'a ChatRequest,
    response_text: Option<&'a str>,
    error: Option<String>,
}

/// Shared client owning the per-endpoint concurrency limiters.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    limiters: Mutex<HashMap<String, Arc<Semaphore>>>,
    audit: Option<Mutex<BufWriter<File>>>,
    audit_seq: AtomicU64,
    /// Test hook: zero out backoff sleeps.
    suppress_backoff: bool,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            limiters: Mutex::new(HashMap::new()),
            audit: None,
            audit_seq: AtomicU64::new(0),
            suppress_backoff: false,
        }
    }

    /// Journal every request/response pair to a JSONL file.
    pub fn with_audit_log(mut self, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    /// Skip backoff sleeps (tests).
    pub fn without_backoff(mut self) -> Self {
        self.suppress_backoff = true;
        self
    }

    fn limiter_for(&self, endpoint: &ModelEndpoint) -> Arc<Semaphore> {
        let mut limiters = self.limiters.lock().expect("limiter lock");
        limiters
            .entry(endpoint.name.clone())
            .or_insert_with(|| Arc::new(Semaphore::new(endpoint.max_concurrency)))
            .clone()
    }

    fn journal(&self, endpoint: &ModelEndpoint, request: &ChatRequest, attempts: u32, outcome: Result<&ChatResponse, &GatewayError>) {
        let Some(audit) = &self.audit else { return };
        let entry = AuditEntry {
            seq: self.audit_seq.fetch_add(1, Ordering::Relaxed),
            endpoint: &endpoint.name,
            model: &endpoint.model_id,
            attempts,
            request,
            response_text: outcome.as_ref().ok().map(|r| r.text.as_str()),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        };
        if let Ok(line) = serde_json::to_string(&entry) {
            let mut w = audit.lock().expect("audit lock");
            let _ = writeln!(w, "{line}");
            let _ = w.flush();
        }
    }

    /// Issue one chat call with bounded concurrency, timeout and retry.
    pub async fn complete(
        &self,
        endpoint: &ModelEndpoint,
        request: &ChatRequest,
    ) -> Result<Completion, GatewayError> {
        endpoint.validate()?;
        let limiter = self.limiter_for(endpoint);
        let _permit = limiter.acquire().await.expect("semaphore never closed");

        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            let outcome =
                match tokio::time::timeout(endpoint.timeout(), self.transport.send(endpoint, request))
                    .await
                {
                    Ok(Ok(response)) if response.text.is_empty() => {
                        Err(TransportError::InvalidResponse("empty response text".into()))
                    }
                    Ok(result) => result,
                    Err(_) => Err(TransportError::Timeout(endpoint.timeout())),
                };
            match outcome {
                Ok(response) => break Ok(Completion { response, attempts }),
                Err(err) if !err.is_retryable() => {
                    break Err(GatewayError::NonRetryable {
                        endpoint: endpoint.name.clone(),
                        source: err,
                    })
                }
                Err(err) => {
                    if attempts >= endpoint.retry.max_attempts {
                        break Err(GatewayError::Exhausted {
                            endpoint: endpoint.name.clone(),
                            attempts,
                            last: err,
                        });
                    }
                    tracing::debug!(endpoint = %endpoint.name, attempt = attempts, error = %err, "retrying");
                    if !self.suppress_backoff {
                        tokio::time::sleep(endpoint.retry.backoff_after(attempts)).await;
                    }
                }
            }
        };
        match &result {
            Ok(completion) => self.journal(endpoint, request, completion.attempts, Ok(&completion.response)),
            Err(err) => self.journal(endpoint, request, attempts, Err(err)),
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_endpoint(name: &str) -> ModelEndpoint {
        ModelEndpoint {
            name: name.into(),
            base_url: "http://localhost:0/v1".into(),
            model_id: format!("{name}-model"),
            max_concurrency: 4,
            timeout_ms: 2_000,
            retry: RetryPolicy { max_attempts: 3, initial_backoff_ms: 0, backoff_multiplier: 2.0 },
            temperature: 0.6,
            max_output_tokens: 4096,
        }
    }

    #[test]
    fn endpoint_validation() {
        assert!(test_endpoint("t").validate().is_ok());
        let mut e = test_endpoint("t");
        e.max_concurrency = 0;
        assert!(e.validate().is_err());
        let mut e = test_endpoint("t");
        e.retry.max_attempts = 0;
        assert!(e.validate().is_err());
    }

    #[test]
    fn api_key_env_var_normalizes_name() {
        assert_eq!(test_endpoint("DeepSeek-R1").api_key_env_var(), "OMNI_API_KEY_DEEPSEEK_R1");
        assert_eq!(test_endpoint("QwQ-32B").api_key_env_var(), "OMNI_API_KEY_QWQ_32B");
    }

    #[test]
    fn backoff_is_non_decreasing() {
        let policy = RetryPolicy { max_attempts: 6, initial_backoff_ms: 100, backoff_multiplier: 2.0 };
        let delays: Vec<Duration> = (1..6).map(|a| policy.backoff_after(a)).collect();
        assert_eq!(delays[0], Duration::from_millis(100));
        assert_eq!(delays[1], Duration::from_millis(200));
        for pair in delays.windows(2) {
            assert!(pair[0] <= pair[1]);
        }
        // Multipliers below 1 are clamped so delays never shrink.
        let shrink = RetryPolicy { max_attempts: 3, initial_backoff_ms: 100, backoff_multiplier: 0.5 };
        assert!(shrink.backoff_after(2) >= shrink.backoff_after(1));
    }

    #[test]
    fn retryability_classification() {
        assert!(TransportError::Timeout(Duration::from_secs(1)).is_retryable());
        assert!(TransportError::RateLimited("429".into()).is_retryable());
        assert!(TransportError::Server("500".into()).is_retryable());
        assert!(TransportError::Connection("refused".into()).is_retryable());
        assert!(!TransportError::Client("400".into()).is_retryable());
    }
}
