//! The transport the harness hands to strategy engines: it serves resume
//! cache hits (recorded completions keyed by fingerprint), fans fresh
//! requests out over threads up to the backend's appetite, and emits one
//! event line per fresh request in member order after the batch completes,
//! which is what makes resume granularity per-iteration.

use std::sync::mpsc::Sender;

use crate::backend::{Backend, BackendError, Completion, GenerationRequest, ScriptedBackend};
use crate::harness::runlog::{encode_line, WriterMsg};
use crate::record::{now_ms, EventLine, RequestEvent};
use crate::strategies::Transport;

pub struct SessionTransport<'a> {
    backend: &'a dyn Backend,
    replay: Option<&'a ScriptedBackend>,
    sink: Option<(usize, Sender<WriterMsg>)>,
    parallel: bool,
}

impl<'a> SessionTransport<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        replay: Option<&'a ScriptedBackend>,
        sink: Option<(usize, Sender<WriterMsg>)>,
    ) -> Self {
        let parallel = backend.prefers_parallel();
        Self { backend, replay, sink, parallel }
    }

    /// A bare transport over a backend: no recording, no resume cache.
    pub fn bare(backend: &'a dyn Backend) -> Self {
        Self::new(backend, None, None)
    }

    fn emit(&self, request: &GenerationRequest, completion: &Completion) -> Result<(), BackendError> {
        let Some((problem_idx, tx)) = &self.sink else {
            return Ok(());
        };
        let event = RequestEvent {
            fingerprint: request.fingerprint.clone(),
            seed: request.seed,
            prompt: request.prompt.clone(),
            response: completion.text.clone(),
            prompt_tokens: completion.usage.prompt_tokens,
            completion_tokens: completion.usage.completion_tokens,
            wall_time_ms: completion.wall_time_ms,
            finish_reason: completion.finish_reason,
            ts_ms: now_ms(),
        };
        let line = encode_line(&EventLine::request(event))
            .map_err(|e| BackendError::Internal(format!("encode event: {e}")))?;
        tx.send(WriterMsg::Line { problem_idx: *problem_idx, line })
            .map_err(|_| BackendError::Internal("run log writer closed".into()))
    }
}

impl Transport for SessionTransport<'_> {
    fn run_batch(
        &mut self,
        requests: Vec<GenerationRequest>,
    ) -> Result<Vec<Completion>, BackendError> {
        let mut results: Vec<Option<Completion>> = vec![None; requests.len()];
        let mut fresh: Vec<usize> = Vec::new();

        for (i, request) in requests.iter().enumerate() {
            match self.replay.map(|r| r.generate(request)) {
                Some(Ok(completion)) => results[i] = Some(completion),
                Some(Err(BackendError::ReplayMiss(_))) | None => fresh.push(i),
                Some(Err(other)) => return Err(other),
            }
        }

        if self.parallel && fresh.len() > 1 {
            let backend = self.backend;
            let outputs: Vec<Result<Completion, BackendError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = fresh
                    .iter()
                    .map(|&i| {
                        let request = &requests[i];
                        scope.spawn(move || backend.generate(request))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
            });
            for (&i, output) in fresh.iter().zip(outputs) {
                results[i] = Some(output?);
            }
        } else {
            for &i in &fresh {
                results[i] = Some(self.backend.generate(&requests[i])?);
            }
        }

        // Emit events for fresh requests only, in request order, after the
        // whole batch settled.
        for &i in &fresh {
            let completion = results[i].as_ref().expect("filled above");
            self.emit(&requests[i], completion)?;
        }

        Ok(results.into_iter().map(|c| c.expect("every slot filled")).collect())
    }
}
