//! Generation backends behind one interface: a live OpenAI-compatible HTTP
//! client, a deterministic simulated model for testing, and a scripted
//! replay backend that serves recorded completions by fingerprint.

mod http;
mod scripted;
mod sim;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::ScriptedBackend;
pub use sim::{PoolEntry, SimBackend, SimModelConfig};

use serde::{Deserialize, Serialize};

use crate::domain::{FinishReason, GenerationParams, Problem, TokenUsage};
use crate::record::{derive_seed, Fingerprint};

/// One generation request: where it came from, what to send, and the seed
/// derived from the master seed and the fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub fingerprint: Fingerprint,
    pub prompt: String,
    pub params: GenerationParams,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(
        master_seed: u64,
        fingerprint: Fingerprint,
        prompt: String,
        params: GenerationParams,
    ) -> Self {
        let seed = derive_seed(master_seed, &fingerprint);
        Self { fingerprint, prompt, params, seed }
    }
}

/// What came back from a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub wall_time_ms: u64,
    pub finish_reason: FinishReason,
}

impl Completion {
    /// A completion standing in for a request that failed for good: empty
    /// text, zero usage, finish reason `error`.
    pub fn error(detail: impl Into<String>, wall_time_ms: u64) -> Self {
        Self {
            text: detail.into(),
            usage: TokenUsage::default(),
            wall_time_ms,
            finish_reason: FinishReason::Error,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// The scripted backend saw a fingerprint that is not in the recording.
    #[error("replay miss: no recorded completion for {0}")]
    ReplayMiss(Fingerprint),
    /// The scripted backend saw a prompt that differs from the recording.
    #[error("replay drift: prompt for {0} does not match the recorded prompt")]
    ReplayDrift(Fingerprint),
    #[error("backend configuration error: {0}")]
    Config(String),
    /// Harness-side failures surfaced through the transport, e.g. the run
    /// log writer going away.
    #[error("{0}")]
    Internal(String),
}

/// A generation backend. `generate` is safe to call from multiple threads;
/// transient failures are reported as error completions (finish reason
/// `error`), while `Err` is reserved for integrity violations that must
/// abort the run.
pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Completion, BackendError>;

    fn name(&self) -> &'static str;

    /// Whether requests within one iteration should fan out over threads.
    /// CPU-bound test doubles answer fastest sequentially.
    fn prefers_parallel(&self) -> bool {
        false
    }
}

/// Serializable backend selection, captured in the run config snapshot so
/// resume rebuilds the identical backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendConfig {
    Sim { config: SimModelConfig },
    Http { config: HttpConfig },
}

impl BackendConfig {
    pub fn label(&self) -> &'static str {
        match self {
            BackendConfig::Sim { .. } => "sim",
            BackendConfig::Http { .. } => "http",
        }
    }

    /// Instantiates the backend. The sim backend binds per-problem truth
    /// answers from the dataset's reference answers.
    pub fn build(&self, problems: &[Problem]) -> Result<Box<dyn Backend>, BackendError> {
        match self {
            BackendConfig::Sim { config } => {
                Ok(Box::new(SimBackend::new(config.clone(), problems)?))
            }
            BackendConfig::Http { config } => Ok(Box::new(HttpBackend::new(config.clone())?)),
        }
    }
}

/// Whitespace-token count; the sim backend's stand-in for a tokenizer.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
