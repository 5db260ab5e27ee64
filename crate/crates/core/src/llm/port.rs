use std::sync::mpsc;
use std::sync::Arc;

use super::{AuditRecord, CompletionRequest, Gateway, LlmError, ScriptedBackend};
use crate::prompt::Purpose;

/// A finished completion, tagged with the generation that requested it.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub generation: u64,
    pub purpose: Purpose,
    pub result: Result<String, LlmError>,
}

/// Non-blocking completion interface used by the session engine.
///
/// Requests are submitted at a logical time and their results collected by
/// polling; this lets the engine run one serialized loop while completions
/// are outstanding.
pub trait LlmPort: Send {
    fn submit(&mut self, req: CompletionRequest, now_ms: u64);
    /// Completions that are ready at `now_ms`, in completion order.
    fn poll(&mut self, now_ms: u64) -> Vec<Completion>;
    fn cancel(&mut self, generation: u64);
}

#[derive(Debug)]
struct Scheduled {
    ready_at: u64,
    completion: Completion,
    prompt: String,
    submitted_at: u64,
}

/// Scripted completions on logical time: an entry's `delay_ms` is how long
/// after submission the result becomes ready. A delay beyond the request
/// deadline resolves as `Timeout` at the deadline.
#[derive(Debug)]
pub struct ScriptedPort {
    backend: ScriptedBackend,
    pending: Vec<Scheduled>,
    audit: Vec<AuditRecord>,
}

impl ScriptedPort {
    pub fn new(backend: ScriptedBackend) -> Self {
        Self {
            backend,
            pending: Vec::new(),
            audit: Vec::new(),
        }
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    fn record(&mut self, s: &Scheduled, output: Result<String, LlmError>, at: u64) {
        self.audit.push(AuditRecord {
            generation: s.completion.generation,
            purpose: s.completion.purpose,
            prompt: s.prompt.clone(),
            output,
            latency_ms: at.saturating_sub(s.submitted_at),
            attempts: 1,
        });
    }
}

impl LlmPort for ScriptedPort {
    fn submit(&mut self, req: CompletionRequest, now_ms: u64) {
        let (ready_at, result) = match self.backend.take(req.purpose, &req.prompt.body) {
            Ok(entry) => {
                let delay = entry.delay_ms.unwrap_or(0);
                if delay > req.deadline_ms {
                    (now_ms + req.deadline_ms, Err(LlmError::Timeout))
                } else {
                    (now_ms + delay, Ok(entry.output))
                }
            }
            Err(e) => (now_ms, Err(e)),
        };
        self.pending.push(Scheduled {
            ready_at,
            completion: Completion {
                generation: req.generation,
                purpose: req.purpose,
                result,
            },
            prompt: req.prompt.body,
            submitted_at: now_ms,
        });
    }

    fn poll(&mut self, now_ms: u64) -> Vec<Completion> {
        let mut ready: Vec<Scheduled> = Vec::new();
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].ready_at <= now_ms {
                ready.push(self.pending.remove(i));
            } else {
                i += 1;
            }
        }
        ready.sort_by_key(|s| (s.ready_at, s.completion.generation));
        ready
            .into_iter()
            .map(|s| {
                let at = s.ready_at;
                self.record(&s, s.completion.result.clone(), at);
                s.completion
            })
            .collect()
    }

    fn cancel(&mut self, generation: u64) {
        if let Some(pos) = self
            .pending
            .iter()
            .position(|s| s.completion.generation == generation)
        {
            let s = self.pending.remove(pos);
            let at = s.submitted_at;
            self.record(&s, Err(LlmError::Cancelled), at);
        }
    }
}

/// Live completions through a [`Gateway`], each request running as a tokio
/// task whose result is queued for the next poll.
pub struct GatewayPort {
    gateway: Arc<Gateway>,
    runtime: tokio::runtime::Handle,
    tx: mpsc::Sender<Completion>,
    rx: mpsc::Receiver<Completion>,
}

impl GatewayPort {
    /// Must be called from within a tokio runtime.
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self::with_handle(gateway, tokio::runtime::Handle::current())
    }

    pub fn with_handle(gateway: Arc<Gateway>, runtime: tokio::runtime::Handle) -> Self {
        let (tx, rx) = mpsc::channel();
        Self {
            gateway,
            runtime,
            tx,
            rx,
        }
    }
}

impl LlmPort for GatewayPort {
    fn submit(&mut self, req: CompletionRequest, _now_ms: u64) {
        let gateway = self.gateway.clone();
        let tx = self.tx.clone();
        self.runtime.spawn(async move {
            let generation = req.generation;
            let purpose = req.purpose;
            let result = gateway.complete(req).await;
            let _ = tx.send(Completion {
                generation,
                purpose,
                result,
            });
        });
    }

    fn poll(&mut self, _now_ms: u64) -> Vec<Completion> {
        self.rx.try_iter().collect()
    }

    fn cancel(&mut self, generation: u64) {
        self.gateway.cancel(generation);
    }
}
