//! popevolve — evolutionary test-time scaling for LLM math reasoning.
//!
//! The library drives a population of candidate solutions for each problem
//! through prompt-based evolution loops against any OpenAI-compatible
//! chat-completions endpoint, or against a deterministic simulated model for
//! offline verification. Four strategies are built in:
//!
//! - **population-evolve**: P parallel candidates, each next generation is
//!   sampled conditioned on the full previous generation; majority voting
//!   over the final generation selects the answer.
//! - **dser**: a single trajectory alternating verification and correction
//!   requests for T rounds; the final refined output is adopted directly.
//! - **genselect**: P candidates generated once, then R selection requests
//!   ask the model to pick the best index; majority voting over the selected
//!   candidates decides.
//! - **baseline**: k independent rollouts scored by majority voting and
//!   pass@k.
//!
//! Every request is seeded deterministically from a master seed and the
//! request fingerprint, and every request/response pair is appended to a
//! line-delimited JSON run log, so runs can be resumed, replayed, and
//! re-scored exactly.

pub mod answer;
pub mod backend;
pub mod domain;
pub mod harness;
pub mod metrics;
pub mod prompts;
pub mod record;
pub mod strategies;

pub use domain::{
    Candidate, EarlyStop, FinishReason, Generation, GenerationParams, Problem, StrategyKind,
    StrategySpec, TokenUsage,
};
pub use record::{derive_seed, Fingerprint, Phase, RunRecord};
