//! The client glues a backend to the cache and the call ledger, and owns
//! the retry policy. `requests_sent` counts one per dispatched request;
//! transport-level retries inside a dispatch are not double-counted, so
//! budget laws stay exact on flaky networks.

use std::sync::Arc;
use std::time::Duration;

use super::{CallLedger, ChatRequest, LlmBackend, LlmError, Phase, ResponseCache};

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            backoff: Duration::ZERO,
        }
    }
}

pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    cache: Option<ResponseCache>,
    ledger: Arc<CallLedger>,
    retry: RetryPolicy,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        LlmClient {
            backend,
            cache: None,
            ledger: Arc::new(CallLedger::new()),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<CallLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    fn check_policy(&self, phase: Phase, request: &ChatRequest) -> Result<(), LlmError> {
        // Labeling and reranking must be deterministic so cache keys and
        // budget laws hold run to run.
        if matches!(phase, Phase::Labeling | Phase::Reranking) && request.temperature != 0.0 {
            return Err(LlmError::NonZeroTemperature {
                phase,
                temperature: request.temperature,
            });
        }
        Ok(())
    }

    fn dispatch(&self, phase: Phase, request: &ChatRequest) -> Result<String, LlmError> {
        self.ledger.record_request(phase);
        let mut last_err = None;
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 && !self.retry.backoff.is_zero() {
                std::thread::sleep(self.retry.backoff * (1 << (attempt - 1).min(8)));
            }
            match self.backend.complete(request) {
                Ok(text) => return Ok(text),
                Err(
                    e @ (LlmError::BackendError { .. }
                    | LlmError::Timeout(_)
                    | LlmError::Transport(_)),
                ) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt ran"))
    }

    /// Send a request straight to the backend, bypassing the cache.
    pub fn complete(&self, phase: Phase, request: &ChatRequest) -> Result<String, LlmError> {
        self.check_policy(phase, request)?;
        self.dispatch(phase, request)
    }

    /// Send through the cache: identical requests after the first are
    /// answered locally and tallied as cache hits, not requests.
    pub fn cached_complete(&self, phase: Phase, request: &ChatRequest) -> Result<String, LlmError> {
        self.check_policy(phase, request)?;
        let Some(cache) = &self.cache else {
            return self.dispatch(phase, request);
        };
        let key = ResponseCache::key_of(request);
        let (response, hit) = cache.get_or_compute(&key, || self.dispatch(phase, request))?;
        if hit {
            self.ledger.record_cache_hit(phase);
        }
        Ok(response)
    }
}
