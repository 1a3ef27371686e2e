//! Replay backend: serves recorded completions by request fingerprint and
//! refuses anything it has never seen. A prompt that differs from the
//! recording is reported as drift, since replay is only meaningful when the
//! strategy rebuilds byte-identical prompts.

use std::collections::HashMap;

use crate::backend::{Backend, BackendError, Completion, GenerationRequest};
use crate::domain::TokenUsage;
use crate::record::{Fingerprint, RequestEvent};

pub struct ScriptedBackend {
    recorded: HashMap<Fingerprint, (String, Completion)>,
}

impl ScriptedBackend {
    pub fn from_events(events: &[RequestEvent]) -> Self {
        let recorded = events
            .iter()
            .map(|e| {
                let completion = Completion {
                    text: e.response.clone(),
                    usage: TokenUsage::new(e.prompt_tokens, e.completion_tokens),
                    wall_time_ms: e.wall_time_ms,
                    finish_reason: e.finish_reason,
                };
                (e.fingerprint.clone(), (e.prompt.clone(), completion))
            })
            .collect();
        Self { recorded }
    }

    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Completion, BackendError> {
        match self.recorded.get(&request.fingerprint) {
            Some((prompt, completion)) => {
                if prompt != &request.prompt {
                    return Err(BackendError::ReplayDrift(request.fingerprint.clone()));
                }
                Ok(completion.clone())
            }
            None => Err(BackendError::ReplayMiss(request.fingerprint.clone())),
        }
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}
