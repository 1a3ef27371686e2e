//! Live OpenAI-compatible chat-completions client.
//!
//! One POST per request to `{base_url}/v1/chat/completions` with the prompt
//! as a single user message. Transport failures, 429s, and 5xx responses are
//! retried with exponential backoff; other 4xx responses are terminal. A
//! request that exhausts its retry budget yields an error completion rather
//! than an `Err`, so one flaky call never aborts a run. An internal gate
//! caps the number of requests in flight.

use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::backend::{Backend, BackendError, Completion, GenerationRequest};
use crate::domain::{FinishReason, TokenUsage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. An empty value
    /// in the environment is allowed for unauthenticated local endpoints.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_initial_backoff_ms")]
    pub initial_backoff_ms: u64,
    /// Maximum requests in flight across all threads.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Forward the derived per-request seed to endpoints that support it.
    #[serde(default = "default_send_seed")]
    pub send_seed: bool,
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_max_retries() -> u32 {
    3
}
fn default_initial_backoff_ms() -> u64 {
    250
}
fn default_concurrency() -> usize {
    8
}
fn default_timeout_secs() -> u64 {
    600
}
fn default_send_seed() -> bool {
    true
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Counting gate bounding in-flight requests.
struct Gate {
    available: Mutex<usize>,
    signal: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Self { available: Mutex::new(permits.max(1)), signal: Condvar::new() }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut available = self.available.lock().expect("gate poisoned");
        while *available == 0 {
            available = self.signal.wait(available).expect("gate poisoned");
        }
        *available -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut available = self.gate.available.lock().expect("gate poisoned");
        *available += 1;
        self.gate.signal.notify_one();
    }
}

enum AttemptError {
    Retryable(String),
    Terminal(String),
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.base_url.trim().is_empty() {
            return Err(BackendError::Config("http base_url must be set".into()));
        }
        if config.model.trim().is_empty() {
            return Err(BackendError::Config("http model must be set".into()));
        }
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(Self { gate: Gate::new(config.concurrency), config, api_key, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &GenerationRequest) -> Result<Completion, AttemptError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage { role: "user", content: &request.prompt }],
            temperature: request.params.temperature,
            max_tokens: request.params.max_new_tokens,
            seed: self.config.send_seed.then_some(request.seed),
        };
        let mut builder = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let response = builder.send().map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let detail = response.text().unwrap_or_default();
            let message = format!("{status}: {detail}");
            return Err(if retryable_status(status.as_u16()) {
                AttemptError::Retryable(message)
            } else {
                AttemptError::Terminal(message)
            });
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| AttemptError::Terminal(format!("malformed response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AttemptError::Terminal("response carried no choices".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            usage: TokenUsage::new(usage.prompt_tokens, usage.completion_tokens),
            wall_time_ms: started.elapsed().as_millis() as u64,
            finish_reason: match choice.finish_reason.as_deref() {
                Some("length") => FinishReason::Length,
                _ => FinishReason::Stop,
            },
        })
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Completion, BackendError> {
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.attempt(request) {
                Ok(completion) => return Ok(completion),
                Err(AttemptError::Terminal(message)) => {
                    log::warn!("{}: terminal failure: {message}", request.fingerprint);
                    last_error = message;
                    break;
                }
                Err(AttemptError::Retryable(message)) => {
                    log::warn!(
                        "{}: attempt {} failed: {message}",
                        request.fingerprint,
                        attempt + 1
                    );
                    last_error = message;
                    if attempt < self.config.max_retries {
                        let backoff = self.config.initial_backoff_ms.saturating_mul(1 << attempt);
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        Ok(Completion::error(
            format!("request failed: {last_error}"),
            started.elapsed().as_millis() as u64,
        ))
    }

    fn name(&self) -> &'static str {
        "http"
    }

    fn prefers_parallel(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_classification() {
        assert!(retryable_status(429));
        assert!(retryable_status(500));
        assert!(retryable_status(503));
        assert!(!retryable_status(400));
        assert!(!retryable_status(401));
        assert!(!retryable_status(404));
    }

    #[test]
    fn gate_blocks_at_capacity() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;

        let gate = Arc::new(Gate::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let gate = Arc::clone(&gate);
                let peak = Arc::clone(&peak);
                let current = Arc::clone(&current);
                scope.spawn(move || {
                    let _permit = gate.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn config_requires_base_url_and_model() {
        let config = HttpConfig {
            base_url: "".into(),
            model: "m".into(),
            api_key_env: default_api_key_env(),
            max_retries: 0,
            initial_backoff_ms: 1,
            concurrency: 1,
            timeout_secs: 5,
            send_seed: true,
        };
        assert!(HttpBackend::new(config).is_err());
    }
}
