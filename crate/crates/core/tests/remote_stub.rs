//! The HTTP provider against a local stub server: wire bodies, response
//! validation, retries and the in-flight bound.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::StubServer;
use dxrank::provider::{Provider, ProviderError, RemoteConfig, RemoteProvider, VocabTokenizer};

fn provider(url: &str) -> RemoteProvider {
    let tokenizer =
        VocabTokenizer::new(vec!["acute".into(), "cholera".into(), "<eos>".into()]).unwrap();
    let mut config = RemoteConfig::new(url, "m");
    config.initial_backoff = Duration::from_millis(1);
    RemoteProvider::new(config, Arc::new(tokenizer)).unwrap()
}

#[test]
fn logprobs_request_and_response_are_bit_exact() {
    let server =
        StubServer::start(|_, _| (200, r#"{"tokens":[1,2],"logprobs":[-0.5,-1.25]}"#.into()));
    let p = provider(&server.url());
    let out = p.score_continuation("ctx", &[1, 2]).unwrap();
    assert_eq!(out.tokens, [1, 2]);
    assert_eq!(out.logprobs, [-0.5, -1.25]);
    let rec = server.recorded();
    assert_eq!(rec.len(), 1);
    assert_eq!(rec[0].path, "/v1/logprobs");
    assert_eq!(
        String::from_utf8(rec[0].body.clone()).unwrap(),
        r#"{"context":"ctx","continuation_tokens":[1,2],"provider":"m"}"#
    );
}

#[test]
fn greedy_request_and_response_are_bit_exact() {
    let server =
        StubServer::start(|_, _| (200, r#"{"text":"acute cholera","tokens":[0,1]}"#.into()));
    let p = provider(&server.url());
    let g = p.greedy_decode("Report: x\nDiagnosis:", 32, &[2]).unwrap();
    assert_eq!(g.text, "acute cholera");
    assert_eq!(g.tokens, [0, 1]);
    let rec = server.recorded();
    assert_eq!(rec[0].path, "/v1/greedy");
    assert_eq!(
        String::from_utf8(rec[0].body.clone()).unwrap(),
        r#"{"context":"Report: x\nDiagnosis:","max_tokens":32,"stop":[2]}"#
    );
}

fn protocol_field(err: ProviderError) -> String {
    match err {
        ProviderError::Protocol { field, .. } => field,
        other => panic!("expected a protocol error, got {other:?}"),
    }
}

#[test]
fn positive_logprob_is_a_protocol_error() {
    let server =
        StubServer::start(|_, _| (200, r#"{"tokens":[1,2],"logprobs":[-0.5,0.1]}"#.into()));
    let err = provider(&server.url())
        .score_continuation("ctx", &[1, 2])
        .unwrap_err();
    assert!(!err.is_retryable());
    assert_eq!(protocol_field(err), "logprobs[1]");
    // protocol errors are not retried
    assert_eq!(server.recorded().len(), 1);
}

#[test]
fn malformed_responses_name_the_field() {
    let cases = [
        (r#"{"tokens":[1,2],"logprobs":[-0.5]}"#, "logprobs"),
        (r#"{"tokens":[1],"logprobs":[-0.5]}"#, "tokens"),
        (r#"{"logprobs":[-0.5,-0.5]}"#, "tokens"),
        (r#"{"tokens":[1,2],"logprobs":[-0.5,"x"]}"#, "logprobs[1]"),
        (r#"not json"#, "body"),
    ];
    for (body, field) in cases {
        let server = StubServer::start(move |_, _| (200, body.to_string()));
        let err = provider(&server.url())
            .score_continuation("ctx", &[1, 2])
            .unwrap_err();
        assert_eq!(protocol_field(err), field, "{body}");
    }
    let server = StubServer::start(|_, _| (200, r#"{"text":7,"tokens":[]}"#.into()));
    let err = provider(&server.url())
        .greedy_decode("c", 4, &[])
        .unwrap_err();
    assert_eq!(protocol_field(err), "text");
}

/// Fails with `status` on the first `failures` requests, then succeeds.
fn flaky(status: u16, failures: usize) -> StubServer {
    let seen = AtomicUsize::new(0);
    StubServer::start(move |_, _| {
        if seen.fetch_add(1, Ordering::SeqCst) < failures {
            (status, r#"{"error":"busy"}"#.into())
        } else {
            (200, r#"{"tokens":[0],"logprobs":[-1.0]}"#.into())
        }
    })
}

#[test]
fn server_errors_and_throttling_are_retried() {
    for status in [500, 503, 429] {
        let server = flaky(status, 2);
        let out = provider(&server.url())
            .score_continuation("c", &[0])
            .unwrap();
        assert_eq!(out.logprobs, [-1.0]);
        assert_eq!(server.recorded().len(), 3);
    }
    let server = flaky(500, 10);
    let err = provider(&server.url())
        .score_continuation("c", &[0])
        .unwrap_err();
    assert!(matches!(
        err,
        ProviderError::Transport {
            attempts: 3,
            retryable: true,
            ..
        }
    ));
    assert_eq!(server.recorded().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = flaky(400, 10);
    let err = provider(&server.url())
        .score_continuation("c", &[0])
        .unwrap_err();
    assert!(matches!(
        err,
        ProviderError::Transport {
            attempts: 1,
            retryable: false,
            ..
        }
    ));
    assert_eq!(server.recorded().len(), 1);
}

#[test]
fn unreachable_server_is_a_retryable_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = provider(&format!("http://{addr}"))
        .score_continuation("c", &[0])
        .unwrap_err();
    assert!(matches!(
        err,
        ProviderError::Transport {
            attempts: 3,
            retryable: true,
            ..
        }
    ));
}

#[test]
fn concurrent_requests_respect_the_in_flight_bound() {
    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (c, pk) = (current.clone(), peak.clone());
    let server = StubServer::start(move |_, _| {
        let now = c.fetch_add(1, Ordering::SeqCst) + 1;
        pk.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(30));
        c.fetch_sub(1, Ordering::SeqCst);
        (200, r#"{"tokens":[0],"logprobs":[-1.0]}"#.into())
    });
    let tokenizer = VocabTokenizer::new(vec!["a".into()]).unwrap();
    let mut config = RemoteConfig::new(server.url(), "m");
    config.max_in_flight = 3;
    let p = RemoteProvider::new(config, Arc::new(tokenizer)).unwrap();
    std::thread::scope(|s| {
        for _ in 0..12 {
            s.spawn(|| p.score_continuation("c", &[0]).unwrap());
        }
    });
    assert_eq!(server.recorded().len(), 12);
    let peak = peak.load(Ordering::SeqCst);
    assert!((2..=3).contains(&peak), "peak {peak}");
}

#[test]
fn invalid_endpoints_and_queries_fail_before_any_request() {
    let tokenizer = Arc::new(VocabTokenizer::new(vec!["a".into()]).unwrap());
    assert!(matches!(
        RemoteProvider::new(RemoteConfig::new("not a url", "m"), tokenizer.clone()),
        Err(ProviderError::Query(_))
    ));
    let server = StubServer::start(|_, _| (200, "{}".into()));
    let p = provider(&server.url());
    assert!(matches!(
        p.score_continuation("c", &[]),
        Err(ProviderError::Query(_))
    ));
    assert!(matches!(
        p.greedy_decode("c", 0, &[]),
        Err(ProviderError::Query(_))
    ));
    assert!(server.recorded().is_empty());
}
