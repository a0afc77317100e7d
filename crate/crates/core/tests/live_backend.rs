mod common;

use std::sync::Arc;

use common::Stub;
use geosr_core::backend::{
    AgentRole, Backend, BackendError, BackendRequest, LiveBackend, LiveConfig, Payload, PointRef,
};
use geosr_core::config::BackendMode;
use geosr_core::field::FieldSpec;
use geosr_core::orchestrator::{RunError, Runner};
use geosr_core::synth::synth_data;
use geosr_core::transport::RetryPolicy;
use geosr_core::RunConfig;

fn fast(endpoint: &str) -> LiveConfig {
    LiveConfig {
        endpoint: format!("{endpoint}/v1/chat/completions"),
        requests_per_second: 0.0,
        timeout_secs: 5,
        retry: RetryPolicy { max_attempts: 4, base_delay_ms: 1, factor: 2.0, max_delay_ms: 5 },
        ..LiveConfig::default()
    }
}

fn chat(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn predict_request() -> BackendRequest {
    let payload = Payload::Predict { point: PointRef { id: "a".into(), lat: 1.0, lon: 2.0 }, topic: "t".into() };
    BackendRequest::new("r0-predict-a", "Rate this place.".into(), payload)
}

#[test]
fn retries_transient_statuses_then_succeeds() {
    let stub = Stub::start(|_, n| match n {
        0 => (503, "busy".into()),
        1 => (429, "slow down".into()),
        _ => (200, chat("SCORE: 4.2")),
    });
    let b = LiveBackend::new(fast(&stub.base), Some("sk-test".into())).unwrap();
    let r = b.invoke(&predict_request()).unwrap();
    assert_eq!(r.text, "SCORE: 4.2");
    assert_eq!(r.attempts, 3);

    let seen = stub.requests();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0].method, "POST");
    assert_eq!(seen[0].target, "/v1/chat/completions");
    assert_eq!(seen[0].header("authorization"), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["messages"][0]["content"], "Rate this place.");
    assert_eq!(body["temperature"], 0.0);
}

#[test]
fn gives_up_after_the_attempt_budget() {
    let stub = Stub::start(|_, _| (500, "down".into()));
    let b = LiveBackend::new(fast(&stub.base), None).unwrap();
    match b.invoke(&predict_request()) {
        Err(BackendError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.requests().len(), 4);
    assert!(stub.requests()[0].header("authorization").is_none());
}

#[test]
fn auth_failure_is_not_retried() {
    let stub = Stub::start(|_, _| (401, "{\"error\":\"bad key\"}".into()));
    let b = LiveBackend::new(fast(&stub.base), Some("wrong".into())).unwrap();
    let err = b.invoke(&predict_request()).unwrap_err();
    assert!(matches!(err, BackendError::Auth(_)));
    assert!(err.is_fatal());
    assert_eq!(stub.requests().len(), 1);
}

#[test]
fn malformed_and_rejected_replies() {
    let stub = Stub::start(|_, n| if n == 0 { (200, "not json".into()) } else { (400, "bad request".into()) });
    let b = LiveBackend::new(fast(&stub.base), None).unwrap();
    assert!(matches!(b.invoke(&predict_request()), Err(BackendError::Malformed(_))));
    assert!(matches!(b.invoke(&predict_request()), Err(BackendError::Rejected { status: 400, .. })));
    assert_eq!(stub.requests().len(), 2);
}

#[test]
fn auth_failure_stops_a_run() {
    let stub = Stub::start(|_, _| (403, "forbidden".into()));
    let d = synth_data(6, 1, &FieldSpec::Wave).unwrap();
    let mut cfg = RunConfig { rounds: 1, concurrency: 1, ..RunConfig::default() };
    cfg.backend.mode = BackendMode::Live;
    cfg.backend.live = fast(&stub.base);
    let backend: Arc<dyn Backend> = Arc::new(LiveBackend::new(cfg.backend.live.clone(), None).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let err = Runner::new(&d, cfg).with_backend(backend).run(dir.path()).unwrap_err();
    assert!(matches!(err, RunError::Backend(BackendError::Auth(_))), "{err}");
    assert!(!dir.path().join("round_0.csv").exists());
}

#[test]
fn live_run_parses_replies_end_to_end() {
    let stub = Stub::start(|req, _| {
        let prompt = serde_json::from_str::<serde_json::Value>(&req.body).unwrap()["messages"][0]["content"]
            .as_str()
            .unwrap()
            .to_string();
        let reply = if prompt.contains("KEEP") {
            "UPDATE: 6.0"
        } else if prompt.contains("bio") {
            "bio1, bio12"
        } else if prompt.contains("SCORE") {
            "SCORE: 3.5"
        } else {
            "NONE"
        };
        (200, chat(reply))
    });
    let d = synth_data(15, 2, &FieldSpec::Wave).unwrap();
    let mut cfg = RunConfig { rounds: 1, concurrency: 2, k_near: 3, ..RunConfig::default() };
    cfg.backend.mode = BackendMode::Live;
    cfg.backend.live = fast(&stub.base);
    let backend: Arc<dyn Backend> = Arc::new(LiveBackend::new(cfg.backend.live.clone(), None).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let out = Runner::new(&d, cfg).with_backend(backend).run(dir.path()).unwrap();
    assert!(out.final_state.scores.iter().all(|s| s.as_f64() == Some(6.0)));
    let calls = geosr_core::orchestrator::read_calls(&dir.path().join("calls.jsonl")).unwrap();
    assert_eq!(calls.iter().filter(|c| c.role == AgentRole::Predict).count(), 15);
    assert!(calls.iter().filter(|c| c.role == AgentRole::Predict).all(|c| c.response.as_deref() == Some("SCORE: 3.5")));
}
