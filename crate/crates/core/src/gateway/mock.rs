//! Deterministic scripted transport for tests and offline pipeline runs.
//!
//! A script is an ordered rule list; the first rule whose match strings
//! are all contained in the request text (system + user) handles the
//! call. Each rule holds a response sequence consumed one per call,
//! repeating the last entry once exhausted, so a single-entry rule
//! behaves as a constant responder while multi-entry rules can script
//! failure-then-success sequences.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, ModelEndpoint, Transport, TransportError};

/// One scripted response: plain text, or a detailed entry that can
/// inject failures and latency.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockResponse {
    Text(String),
    Detailed {
        #[serde(default)]
        text: Option<String>,
        /// One of `timeout`, `rate_limit`, `server`, `client`,
        /// `connection`, `empty`.
        #[serde(default)]
        error: Option<String>,
        #[serde(default)]
        delay_ms: Option<u64>,
    },
}

/// A match pattern plus its response sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub name: Option<String>,
    /// Substring that must appear in the request text.
    #[serde(default, rename = "match")]
    pub match_substring: Option<String>,
    /// All of these substrings must appear (conjunctive match).
    #[serde(default)]
    pub match_all: Vec<String>,
    pub responses: Vec<MockResponse>,
}

impl MockRule {
    fn matches(&self, text: &str) -> bool {
        let single = self
            .match_substring
            .as_ref()
            .map(|m| text.contains(m))
            .unwrap_or(true);
        single && self.match_all.iter().all(|m| text.contains(m))
    }
}

/// An ordered list of rules, loadable from JSON.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Convenience constructor: one constant-response rule.
    pub fn constant(match_substring: &str, response: &str) -> Self {
        Self {
            rules: vec![MockRule {
                name: None,
                match_substring: Some(match_substring.to_string()),
                match_all: Vec::new(),
                responses: vec![MockResponse::Text(response.to_string())],
            }],
        }
    }
}

struct CompiledRule {
    rule: MockRule,
    cursor: AtomicUsize,
}

/// In-memory scripted transport with concurrency instrumentation.
pub struct MockTransport {
    rules: Vec<CompiledRule>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Arc<Self> {
        Arc::new(Self {
            rules: script
                .rules
                .into_iter()
                .map(|rule| CompiledRule { rule, cursor: AtomicUsize::new(0) })
                .collect(),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        })
    }

    /// Total calls observed.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest simultaneous in-flight count observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn word_count(text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

struct InFlightGuard<'a>(&'a MockTransport);

impl<'a> InFlightGuard<'a> {
    fn enter(t: &'a MockTransport) -> Self {
        let now = t.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        t.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        Self(t)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

fn scripted_error(kind: &str, endpoint: &ModelEndpoint) -> TransportError {
    match kind {
        "timeout" => TransportError::Timeout(endpoint.timeout()),
        "rate_limit" => TransportError::RateLimited("scripted 429".into()),
        "client" => TransportError::Client("scripted 4xx".into()),
        "connection" => TransportError::Connection("scripted connection error".into()),
        "empty" => TransportError::InvalidResponse("scripted empty response".into()),
        _ => TransportError::Server(format!("scripted {kind}")),
    }
}

#[async_trait]
impl Transport for MockTransport {
    async fn send(
        &self,
        endpoint: &ModelEndpoint,
        request: &ChatRequest,
    ) -> Result<ChatResponse, TransportError> {
        let _guard = InFlightGuard::enter(self);
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = request.match_text();

        let Some(compiled) = self.rules.iter().find(|r| r.rule.matches(&text)) else {
            return Err(TransportError::Client(format!(
                "no mock rule matched request for {}",
                endpoint.name
            )));
        };
        let responses = &compiled.rule.responses;
        if responses.is_empty() {
            return Err(TransportError::Client("mock rule has no responses".into()));
        }
        let idx = compiled.cursor.fetch_add(1, Ordering::SeqCst).min(responses.len() - 1);

        let (reply, error, delay) = match &responses[idx] {
            MockResponse::Text(t) => (Some(t.clone()), None, None),
            MockResponse::Detailed { text, error, delay_ms } => {
                (text.clone(), error.clone(), *delay_ms)
            }
        };
        if let Some(ms) = delay {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        } else {
            // Yield so that simultaneous callers actually overlap and
            // the in-flight instrumentation observes real concurrency.
            tokio::task::yield_now().await;
        }
        if let Some(kind) = error {
            return Err(scripted_error(&kind, endpoint));
        }
        let reply = reply.unwrap_or_default();
        Ok(ChatResponse {
            prompt_tokens: Self::word_count(&text),
            completion_tokens: Self::word_count(&reply),
            text: reply,
            finish_reason: Some("stop".into()),
        })
    }
}
