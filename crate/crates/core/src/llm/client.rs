use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use tracing::{debug, warn};

use super::{
    BackendConfig, BackendError, CompletionResponse, LlmBackend, LlmError, PromptRequest,
    ResponseCache,
};

/// Counting semaphore bounding the number of live backend calls.
struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Gate {
            limit,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap();
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Counters accumulated over the client's lifetime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallStats {
    /// Requests that reached the backend (after a cache miss).
    pub live_requests: usize,
    /// Backend invocations, including retries.
    pub attempts: usize,
    pub cache_hits: usize,
    /// Largest number of simultaneous backend calls observed.
    pub peak_in_flight: usize,
}

impl CallStats {
    pub fn since(&self, earlier: &CallStats) -> CallStats {
        CallStats {
            live_requests: self.live_requests - earlier.live_requests,
            attempts: self.attempts - earlier.attempts,
            cache_hits: self.cache_hits - earlier.cache_hits,
            peak_in_flight: self.peak_in_flight,
        }
    }
}

/// Per-request outcomes of [`LlmClient::complete_batch`], in input order.
#[derive(Debug)]
pub struct BatchResponses(pub Vec<Result<CompletionResponse, LlmError>>);

impl BatchResponses {
    pub fn failed_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.is_err().then_some(i))
            .collect()
    }

    /// All responses, or an aggregate error naming every failed index.
    pub fn into_result(self) -> Result<Vec<CompletionResponse>, LlmError> {
        let mut ok = Vec::with_capacity(self.0.len());
        let mut failed = Vec::new();
        for (i, r) in self.0.into_iter().enumerate() {
            match r {
                Ok(resp) => ok.push(resp),
                Err(e) => failed.push((i, e.to_string())),
            }
        }
        if failed.is_empty() {
            Ok(ok)
        } else {
            Err(LlmError::Batch { failed })
        }
    }
}

/// Cache-first, retrying, concurrency-bounded front end over a backend.
/// Safe to share between threads.
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    cache: Option<ResponseCache>,
    gate: Gate,
    retry_limit: u32,
    backoff: Duration,
    live_requests: AtomicUsize,
    attempts: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>, config: &BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let cache = match &config.cache_dir {
            Some(dir) => Some(ResponseCache::open(dir).map_err(|e| {
                LlmError::InvalidRequest(format!("cannot open cache {}: {e}", dir.display()))
            })?),
            None => None,
        };
        Ok(LlmClient {
            backend,
            cache,
            gate: Gate::new(config.max_concurrent),
            retry_limit: config.retry_limit,
            backoff: Duration::from_millis(config.backoff_ms),
            live_requests: AtomicUsize::new(0),
            attempts: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        })
    }

    pub fn max_concurrent(&self) -> usize {
        self.gate.limit
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            live_requests: self.live_requests.load(Ordering::SeqCst),
            attempts: self.attempts.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            peak_in_flight: self.gate.peak.load(Ordering::SeqCst),
        }
    }

    pub fn complete(&self, request: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        request.validate()?;
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(request) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(CompletionResponse {
                    text,
                    cached: true,
                    latency_ms: 0,
                    attempt: 0,
                });
            }
        }
        self.call_live(request)
    }

    /// Skips the cache lookup (used when a cached answer failed to parse);
    /// a successful answer replaces the cached one.
    pub fn refresh(&self, request: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        request.validate()?;
        if let Some(cache) = &self.cache {
            cache.remove(request);
        }
        self.call_live(request)
    }

    fn call_live(&self, request: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        self.live_requests.fetch_add(1, Ordering::SeqCst);
        let start = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let outcome = {
                let _permit = self.gate.acquire();
                self.backend.complete(request)
            };
            match outcome {
                Ok(text) if !text.trim().is_empty() => {
                    if let Some(cache) = &self.cache {
                        if let Err(e) = cache.put(request, &text) {
                            warn!("failed to persist cache entry: {e}");
                        }
                    }
                    return Ok(CompletionResponse {
                        text,
                        cached: false,
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempt,
                    });
                }
                Ok(_) => {
                    if attempt > self.retry_limit {
                        return Err(LlmError::RetriesExhausted {
                            attempts: attempt,
                            last: "empty completion".into(),
                        });
                    }
                }
                Err(BackendError::Rejected { status, body }) => {
                    return Err(LlmError::Rejected { status, body });
                }
                Err(BackendError::Fatal(msg)) => return Err(LlmError::Backend(msg)),
                Err(BackendError::Retryable(msg)) => {
                    if attempt > self.retry_limit {
                        return Err(LlmError::RetriesExhausted {
                            attempts: attempt,
                            last: msg,
                        });
                    }
                    debug!("{} attempt {attempt} failed: {msg}", self.backend.name());
                }
            }
            std::thread::sleep(self.backoff_delay(attempt));
        }
    }

    fn backoff_delay(&self, attempt: u32) -> Duration {
        if self.backoff.is_zero() {
            return Duration::ZERO;
        }
        let exp = self.backoff.saturating_mul(1 << (attempt - 1).min(6));
        let jitter: f64 = rand::rng().random_range(0.5..1.5);
        exp.mul_f64(jitter)
    }

    /// Runs every request, at most `max_concurrent` live calls at a time.
    /// Failures are reported per slot and never abort the rest of the batch.
    pub fn complete_batch(&self, requests: &[PromptRequest]) -> BatchResponses {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<CompletionResponse, LlmError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.gate.limit.min(requests.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let r = self.complete(&requests[i]);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        BatchResponses(
            slots
                .into_iter()
                .map(|m| m.into_inner().unwrap().expect("every slot filled"))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::TemplateId;
    use std::sync::atomic::AtomicU32;

    struct Scripted {
        calls: AtomicU32,
        fail_first: u32,
        error: BackendError,
    }

    impl LlmBackend for Scripted {
        fn complete(&self, _r: &PromptRequest) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(self.error.clone())
            } else {
                Ok("ok".into())
            }
        }
    }

    fn client(fail_first: u32, error: BackendError) -> (Arc<Scripted>, LlmClient) {
        let backend = Arc::new(Scripted {
            calls: AtomicU32::new(0),
            fail_first,
            error,
        });
        let cfg = BackendConfig {
            backoff_ms: 0,
            ..BackendConfig::default()
        };
        let c = LlmClient::new(backend.clone(), &cfg).unwrap();
        (backend, c)
    }

    #[test]
    fn retries_then_succeeds() {
        let (_, c) = client(2, BackendError::Retryable("500".into()));
        let r = c.complete(&PromptRequest::new(TemplateId::Concept, "x")).unwrap();
        assert_eq!(r.attempt, 3);
        assert!(!r.cached);
        assert_eq!(c.stats().attempts, 3);
    }

    #[test]
    fn exhausts_retries() {
        let (b, c) = client(100, BackendError::Retryable("503".into()));
        let err = c.complete(&PromptRequest::new(TemplateId::Concept, "x")).unwrap_err();
        assert!(matches!(err, LlmError::RetriesExhausted { attempts: 4, .. }));
        assert_eq!(b.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn client_errors_not_retried() {
        let (b, c) = client(
            100,
            BackendError::Rejected {
                status: 401,
                body: "no key".into(),
            },
        );
        let err = c.complete(&PromptRequest::new(TemplateId::Concept, "x")).unwrap_err();
        assert!(matches!(err, LlmError::Rejected { status: 401, .. }));
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn invalid_requests_rejected() {
        let (_, c) = client(0, BackendError::Fatal(String::new()));
        assert!(c.complete(&PromptRequest::new(TemplateId::Concept, "  ")).is_err());
        let mut r = PromptRequest::new(TemplateId::Concept, "x");
        r.temperature = -1.0;
        assert!(c.complete(&r).is_err());
        assert!(LlmClient::new(
            Arc::new(Scripted {
                calls: AtomicU32::new(0),
                fail_first: 0,
                error: BackendError::Fatal(String::new())
            }),
            &BackendConfig {
                max_concurrent: 0,
                ..BackendConfig::default()
            }
        )
        .is_err());
    }
}
