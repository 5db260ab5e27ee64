//! Completion gateway over interchangeable LLM backends.
//!
//! [`Gateway`] wraps a backend with a per-request deadline, retry with
//! doubling backoff for transient failures, cancellation by generation, and
//! an audit log. The session engine talks to completions through the
//! non-blocking [`LlmPort`] trait so that replay can run on logical time.

mod http;
mod port;
mod scripted;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio_util::sync::CancellationToken;

use crate::prompt::{PromptText, Purpose};

pub use http::{
    HttpBackend, HttpBackendConfig, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, DEFAULT_MODEL,
};
pub use port::{Completion, GatewayPort, LlmPort, ScriptedPort};
pub use scripted::{load_script, parse_script, ScriptEntry, ScriptedBackend};

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub purpose: Purpose,
    pub prompt: PromptText,
    pub temperature: f32,
    pub max_output_chars: usize,
    pub deadline_ms: u64,
    /// Strictly increasing per session; used to cancel and to drop stale results.
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum LlmError {
    #[error("completion deadline exceeded")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("completion cancelled")]
    Cancelled,
    #[error("script has no {0} entry left")]
    ScriptExhausted(Purpose),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::RateLimited)
    }
}

#[async_trait]
pub trait LlmBackend: Send + Sync {
    /// Produce the raw completion text, unmodified.
    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

/// Decoding and deadline parameters per prompt purpose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    pub dfcp_temperature: f32,
    pub ttcp_temperature: f32,
    pub dfcp_deadline_ms: u64,
    pub ttcp_deadline_ms: u64,
    pub dfcp_max_output_chars: usize,
    pub ttcp_max_output_chars: usize,
}

impl Default for LlmParams {
    fn default() -> Self {
        Self {
            dfcp_temperature: 0.7,
            ttcp_temperature: 0.0,
            dfcp_deadline_ms: 15_000,
            ttcp_deadline_ms: 3_000,
            dfcp_max_output_chars: 600,
            ttcp_max_output_chars: 80,
        }
    }
}

impl LlmParams {
    pub fn request(&self, prompt: PromptText, generation: u64) -> CompletionRequest {
        let (temperature, deadline_ms, max_output_chars) = match prompt.purpose {
            Purpose::Dfcp => (
                self.dfcp_temperature,
                self.dfcp_deadline_ms,
                self.dfcp_max_output_chars,
            ),
            Purpose::Ttcp => (
                self.ttcp_temperature,
                self.ttcp_deadline_ms,
                self.ttcp_max_output_chars,
            ),
        };
        CompletionRequest {
            purpose: prompt.purpose,
            prompt,
            temperature,
            max_output_chars,
            deadline_ms,
            generation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub generation: u64,
    pub purpose: Purpose,
    pub prompt: String,
    pub output: Result<String, LlmError>,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelAck {
    Cancelled,
    /// Nothing with that generation was in flight.
    NotInFlight,
}

pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    retry: RetryPolicy,
    in_flight: Mutex<HashMap<u64, CancellationToken>>,
    audit: Mutex<Vec<AuditRecord>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self::with_retry(backend, RetryPolicy::default())
    }

    pub fn with_retry(backend: Arc<dyn LlmBackend>, retry: RetryPolicy) -> Self {
        Self {
            backend,
            retry,
            in_flight: Mutex::new(HashMap::new()),
            audit: Mutex::new(Vec::new()),
        }
    }

    /// Run one completion. The deadline covers all attempts; timeouts are
    /// never retried. A cancel that lands before the result is delivered
    /// wins, and the late result is dropped.
    pub async fn complete(&self, req: CompletionRequest) -> Result<String, LlmError> {
        let token = CancellationToken::new();
        self.in_flight
            .lock()
            .unwrap()
            .insert(req.generation, token.clone());

        let started = Instant::now();
        let mut attempts = 0u32;
        let attempt_loop = async {
            let mut backoff = self.retry.initial_backoff;
            loop {
                attempts += 1;
                match self.backend.complete(&req).await {
                    Err(e) if e.is_retryable() && attempts <= self.retry.max_retries => {
                        tracing::debug!(generation = req.generation, error = %e, "retrying completion");
                        tokio::time::sleep(backoff).await;
                        backoff *= 2;
                    }
                    other => return other,
                }
            }
        };
        let deadline = Duration::from_millis(req.deadline_ms);

        let result = tokio::select! {
            biased;
            _ = token.cancelled() => Err(LlmError::Cancelled),
            r = tokio::time::timeout(deadline, attempt_loop) => r.unwrap_or(Err(LlmError::Timeout)),
        };
        let result = if token.is_cancelled() {
            Err(LlmError::Cancelled)
        } else {
            result
        };

        self.in_flight.lock().unwrap().remove(&req.generation);
        self.audit.lock().unwrap().push(AuditRecord {
            generation: req.generation,
            purpose: req.purpose,
            prompt: req.prompt.body.clone(),
            output: result.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
        });
        result
    }

    pub fn cancel(&self, generation: u64) -> CancelAck {
        match self.in_flight.lock().unwrap().get(&generation) {
            Some(token) => {
                token.cancel();
                CancelAck::Cancelled
            }
            None => CancelAck::NotInFlight,
        }
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.audit.lock().unwrap().clone()
    }
}
