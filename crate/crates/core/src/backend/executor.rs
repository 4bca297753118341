//! Shared executor: cache lookup, admission control, retries, recording.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    BackendError, ChatBackend, CompletionRecord, CompletionRequest, HeuristicCounter, InFlightGate, RateLimiter,
    RatePolicy, RecordCache, TokenCounter,
};
use crate::clock::{Clock, SystemClock};
use crate::prompt::{PromptPlan, Strategy};
use crate::retry::RetryPolicy;

/// One `complete` call as seen by the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub request_digest: String,
    pub cached: bool,
    /// Network attempts made (0 when served from cache).
    pub attempts: u32,
    /// Admission time of the final attempt on the executor clock.
    pub admitted_at_ms: Option<u64>,
    pub estimated_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionOutcome {
    pub record: CompletionRecord,
    pub cached: bool,
}

pub struct Executor {
    backend: Option<Arc<dyn ChatBackend>>,
    backend_id: String,
    cache: Arc<RecordCache>,
    limiter: RateLimiter,
    gate: InFlightGate,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    counter: Arc<dyn TokenCounter>,
    log: Mutex<Vec<LogEntry>>,
}

impl Executor {
    /// Executor that calls `backend` on cache misses.
    pub fn live(backend: Arc<dyn ChatBackend>, cache: Arc<RecordCache>, policy: &RatePolicy) -> Self {
        let id = backend.id().to_string();
        Self::build(Some(backend), id, cache, policy)
    }

    /// Executor that only serves cached records recorded under `backend_id`.
    pub fn replay_only(backend_id: impl Into<String>, cache: Arc<RecordCache>) -> Self {
        Self::build(None, backend_id.into(), cache, &RatePolicy::default())
    }

    fn build(
        backend: Option<Arc<dyn ChatBackend>>,
        backend_id: String,
        cache: Arc<RecordCache>,
        policy: &RatePolicy,
    ) -> Self {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        Self {
            backend,
            backend_id,
            cache,
            limiter: RateLimiter::new(policy, clock.clone()),
            gate: InFlightGate::new(policy.max_in_flight),
            retry: policy.retry.clone(),
            clock,
            counter: Arc::new(HeuristicCounter),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Replaces the clock used for rate limiting and retry sleeps.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>, policy: &RatePolicy) -> Self {
        self.limiter = RateLimiter::new(policy, clock.clone());
        self.clock = clock;
        self
    }

    /// Replaces the token counter used when the backend reports no usage.
    pub fn with_token_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn is_replay_only(&self) -> bool {
        self.backend.is_none()
    }

    pub fn cache(&self) -> &RecordCache {
        &self.cache
    }

    pub fn log(&self) -> Vec<LogEntry> {
        self.log.lock().unwrap().clone()
    }

    /// Network attempts across all logged calls.
    pub fn network_attempts(&self) -> u64 {
        self.log.lock().unwrap().iter().map(|e| e.attempts as u64).sum()
    }

    fn prompt_tokens(&self, request: &CompletionRequest) -> u64 {
        request.turns.iter().map(|t| self.counter.count(&t.content)).sum()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionOutcome, BackendError> {
        request.validate()?;
        let canonical = request.canonical_json(&self.backend_id);
        let digest = request.digest(&self.backend_id);
        let estimate = self.prompt_tokens(request);
        if let Some(record) = self.cache.get(&digest) {
            self.log.lock().unwrap().push(LogEntry {
                request_digest: digest,
                cached: true,
                attempts: 0,
                admitted_at_ms: None,
                estimated_tokens: estimate,
            });
            return Ok(CompletionOutcome { record, cached: true });
        }
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| BackendError::CacheMiss(digest.clone()))?;

        let mut attempts = 0u32;
        let (response, latency, admitted) = loop {
            attempts += 1;
            let result = {
                let _permit = self.gate.enter();
                let admitted = self.limiter.acquire(estimate)?;
                let started = Instant::now();
                backend
                    .send(request)
                    .map(|r| (r, started.elapsed(), admitted))
            };
            match result {
                Ok(ok) => break ok,
                Err(e) if e.is_retryable() && attempts < self.retry.max_attempts => {
                    tracing::warn!(attempt = attempts, error = %e, "completion failed, retrying");
                    self.clock.sleep(self.retry.delay_after(attempts));
                }
                Err(e) if e.is_retryable() => {
                    self.log_failure(&digest, attempts, estimate);
                    return Err(BackendError::RetriesExhausted {
                        attempts,
                        last: e.to_string(),
                    });
                }
                Err(e) => {
                    self.log_failure(&digest, attempts, estimate);
                    return Err(e);
                }
            }
        };

        let synthetic = backend.is_synthetic();
        let (prompt_tokens, completion_tokens, estimated) = match response.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens, false),
            None => (estimate, self.counter.count(&response.text), true),
        };
        let record = CompletionRecord {
            request_digest: digest.clone(),
            response_text: response.text,
            prompt_tokens,
            completion_tokens,
            tokens_estimated: estimated,
            latency_ms: if synthetic { 0 } else { latency.as_millis() as u64 },
            backend_id: self.backend_id.clone(),
            timestamp_ms: if synthetic { 0 } else { unix_ms() },
            attempts,
        };
        self.cache.append(&canonical, &record)?;
        self.log.lock().unwrap().push(LogEntry {
            request_digest: digest,
            cached: false,
            attempts,
            admitted_at_ms: Some(admitted.as_millis() as u64),
            estimated_tokens: estimate,
        });
        Ok(CompletionOutcome { record, cached: false })
    }

    fn log_failure(&self, digest: &str, attempts: u32, estimate: u64) {
        self.log.lock().unwrap().push(LogEntry {
            request_digest: digest.to_string(),
            cached: false,
            attempts,
            admitted_at_ms: None,
            estimated_tokens: estimate,
        });
    }
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or(Duration::ZERO)
        .as_millis() as u64
}

/// Model parameters applied to every round of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestParams {
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    /// Temperature of the summarization round; defaults to `temperature`.
    #[serde(default)]
    pub summary_temperature: Option<f64>,
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
}

impl RequestParams {
    fn temperature_for(&self, strategy: &Strategy, round: usize) -> f64 {
        match (strategy, round) {
            (Strategy::SummarizeThenAnswer { .. }, 0) => self.summary_temperature.unwrap_or(self.temperature),
            _ => self.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub outputs: Vec<String>,
    pub records: Vec<CompletionRecord>,
}

/// Runs the rounds of `plan` in order, feeding each round's output forward.
pub fn execute_plan(plan: &PromptPlan, executor: &Executor, params: &RequestParams) -> Result<PlanOutcome, BackendError> {
    let mut outputs = Vec::with_capacity(plan.rounds.len());
    let mut records = Vec::with_capacity(plan.rounds.len());
    for round in 0..plan.rounds.len() {
        let turns = plan.conversation(round, &outputs)?;
        let request = CompletionRequest {
            model: params.model.clone(),
            turns,
            temperature: params.temperature_for(&plan.strategy, round),
            max_output_tokens: params.max_output_tokens,
        };
        let outcome = executor.complete(&request)?;
        outputs.push(outcome.record.response_text.clone());
        records.push(outcome.record);
    }
    Ok(PlanOutcome { outputs, records })
}
