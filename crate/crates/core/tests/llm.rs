mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{chat_body, FakeServer};
use kec::llm::{
    BackendConfig, BackendError, HttpBackend, LlmBackend, LlmClient, LlmError, MockBackend,
    PromptRequest, TemplateId,
};

fn config(cache: Option<&std::path::Path>) -> BackendConfig {
    BackendConfig {
        backoff_ms: 1,
        cache_dir: cache.map(|p| p.to_path_buf()),
        ..BackendConfig::default()
    }
}

fn http_client(server: &FakeServer, cache: Option<&std::path::Path>) -> LlmClient {
    let backend = HttpBackend::new(&server.base_url, Some("sk-test".into()), Duration::from_secs(5)).unwrap();
    LlmClient::new(Arc::new(backend), &config(cache)).unwrap()
}

#[test]
fn recovers_from_two_server_errors() {
    let server = FakeServer::start(vec![
        (500, "oops".into()),
        (500, "oops".into()),
        (200, chat_body("Concept: heron\nDescription: a wading bird")),
    ]);
    let client = http_client(&server, None);
    let req = PromptRequest::new(TemplateId::Concept, "Combine these nouns");
    let resp = client.complete(&req).unwrap();
    assert_eq!(resp.attempt, 3);
    assert!(!resp.cached);
    assert!(resp.text.starts_with("Concept: heron"));

    let got = server.requests();
    assert_eq!(got.len(), 3);
    assert_eq!(got[0].path, "/v1/chat/completions");
    assert_eq!(got[0].authorization.as_deref(), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&got[2].body).unwrap();
    assert_eq!(body["model"], "gpt-4o");
    assert_eq!(body["max_tokens"], 512);
    assert!((body["temperature"].as_f64().unwrap() - 0.1).abs() < 1e-6);
    assert_eq!(body["messages"][0]["content"], "Combine these nouns");
}

#[test]
fn gives_up_after_retry_limit() {
    let server = FakeServer::start(vec![(503, "busy".into())]);
    let client = http_client(&server, None);
    let err = client
        .complete(&PromptRequest::new(TemplateId::UniAttr, "x"))
        .unwrap_err();
    assert!(matches!(err, LlmError::RetriesExhausted { attempts: 4, .. }), "{err}");
    assert_eq!(server.requests().len(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let server = FakeServer::start(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let client = http_client(&server, None);
    let err = client
        .complete(&PromptRequest::new(TemplateId::BiAttr, "x"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Rejected { status: 401, .. }), "{err}");
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn rate_limit_is_retried() {
    let server = FakeServer::start(vec![(429, "slow down".into()), (200, chat_body("ok"))]);
    let client = http_client(&server, None);
    let resp = client.complete(&PromptRequest::new(TemplateId::Concept, "x")).unwrap();
    assert_eq!((resp.text.as_str(), resp.attempt), ("ok", 2));
}

#[test]
fn malformed_success_body_is_retried() {
    let server = FakeServer::start(vec![(200, "{}".into()), (200, chat_body("fine"))]);
    let client = http_client(&server, None);
    let resp = client.complete(&PromptRequest::new(TemplateId::Concept, "x")).unwrap();
    assert_eq!(resp.text, "fine");
}

#[test]
fn http_replies_are_cached() {
    let dir = tempfile::tempdir().unwrap();
    let server = FakeServer::start(vec![(200, chat_body("cached text"))]);
    let client = http_client(&server, Some(dir.path()));
    let req = PromptRequest::new(TemplateId::Concept, "same prompt");
    client.complete(&req).unwrap();
    let again = http_client(&server, Some(dir.path())).complete(&req).unwrap();
    assert!(again.cached);
    assert_eq!(again.text, "cached text");
    assert_eq!(server.requests().len(), 1);
}

struct SlowEcho {
    in_flight: AtomicUsize,
    fail_on: Option<String>,
}

impl LlmBackend for SlowEcho {
    fn complete(&self, r: &PromptRequest) -> Result<String, BackendError> {
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(5));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if self.fail_on.as_deref() == Some(r.rendered_prompt.as_str()) {
            return Err(BackendError::Rejected {
                status: 400,
                body: "no".into(),
            });
        }
        Ok(format!("echo {}", r.rendered_prompt))
    }
}

fn requests(n: usize) -> Vec<PromptRequest> {
    (0..n)
        .map(|i| PromptRequest::new(TemplateId::UniAttr, format!("prompt {i}")))
        .collect()
}

#[test]
fn batch_preserves_order_and_bounds_concurrency() {
    let backend = Arc::new(SlowEcho {
        in_flight: AtomicUsize::new(0),
        fail_on: None,
    });
    let client = LlmClient::new(backend, &config(None)).unwrap();
    let reqs = requests(100);
    let out = client.complete_batch(&reqs).into_result().unwrap();
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.text, format!("echo prompt {i}"));
    }
    let stats = client.stats();
    assert!(stats.peak_in_flight <= 20 && stats.peak_in_flight > 1, "{stats:?}");
    assert_eq!(stats.live_requests, 100);
}

#[test]
fn one_failure_does_not_sink_the_batch() {
    let backend = Arc::new(SlowEcho {
        in_flight: AtomicUsize::new(0),
        fail_on: Some("prompt 7".into()),
    });
    let client = LlmClient::new(backend, &config(None)).unwrap();
    let batch = client.complete_batch(&requests(30));
    assert_eq!(batch.failed_indices(), vec![7]);
    assert_eq!(batch.0.iter().filter(|r| r.is_ok()).count(), 29);
    assert!(matches!(batch.into_result(), Err(LlmError::Batch { .. })));
}

#[test]
fn warm_cache_batch_makes_no_live_calls() {
    let dir = tempfile::tempdir().unwrap();
    let reqs = requests(40);
    let cold = LlmClient::new(Arc::new(MockBackend), &config(Some(dir.path()))).unwrap();
    let first = cold.complete_batch(&reqs).into_result().unwrap();
    assert_eq!(cold.stats().live_requests, 40);
    let warm = LlmClient::new(Arc::new(MockBackend), &config(Some(dir.path()))).unwrap();
    let second = warm.complete_batch(&reqs).into_result().unwrap();
    assert_eq!(warm.stats().live_requests, 0);
    assert_eq!(warm.stats().cache_hits, 40);
    let texts = |v: &[kec::llm::CompletionResponse]| v.iter().map(|r| r.text.clone()).collect::<Vec<_>>();
    assert_eq!(texts(&first), texts(&second));
}
