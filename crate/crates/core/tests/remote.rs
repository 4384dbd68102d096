mod common;

use common::{fake_endpoint, load};
use datasift::complexity::score_pool;
use datasift::provider::LogProbProvider;
use datasift::{Provider, RemoteProvider, RemoteSpec, ScoreError, Template};
use mockito::Matcher;
use serde_json::json;

fn spec(server: &mockito::ServerGuard) -> RemoteSpec {
    RemoteSpec {
        endpoint: format!("{}/v1/completions", server.url()),
        model: "m".into(),
        api_key_env: "DATASIFT_TEST_UNSET_KEY".into(),
        backoff_ms: 1,
        ..RemoteSpec::default()
    }
}

fn echo_body(logprobs: serde_json::Value, offsets: serde_json::Value) -> String {
    json!({"choices": [{"text": "", "logprobs": {"token_logprobs": logprobs, "text_offset": offsets}}]}).to_string()
}

#[test]
fn boundary_token_is_the_continuation() {
    let mut server = mockito::Server::new();
    let mock = server
        .mock("POST", "/v1/completions")
        .match_body(Matcher::Json(
            json!({"model": "m", "prompt": "AB", "max_tokens": 0, "echo": true, "logprobs": 0}),
        ))
        .with_body(echo_body(json!([null, -0.25]), json!([0, 1])))
        .expect(1)
        .create();
    let p = RemoteProvider::new(spec(&server)).unwrap();
    assert_eq!(p.logprobs("A", "B").unwrap().values(), &[-0.25]);
    assert_eq!(p.requests(), 1);
    mock.assert();
}

#[test]
fn token_across_the_boundary_is_an_alignment_error() {
    let mut server = mockito::Server::new();
    let _m = server
        .mock("POST", "/v1/completions")
        .with_body(echo_body(json!([null]), json!([0])))
        .create();
    let p = RemoteProvider::new(spec(&server)).unwrap();
    assert_eq!(
        p.logprobs("A", "B"),
        Err(ScoreError::Alignment {
            boundary: 1,
            start: 0,
            end: 2
        })
    );
}

#[test]
fn warm_cache_issues_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let mut server = mockito::Server::new();
    let mock = server
        .mock("POST", "/v1/completions")
        .with_body(echo_body(json!([null, -0.5, -1.5]), json!([0, 2, 5])))
        .expect(1)
        .create();
    let spec = RemoteSpec {
        cache_dir: Some(dir.path().to_path_buf()),
        ..spec(&server)
    };
    let first = RemoteProvider::new(spec.clone()).unwrap();
    let a = first.logprobs("x ", "yy zz").unwrap();
    assert_eq!(a.values(), &[-0.5, -1.5]);
    assert_eq!(first.logprobs("x ", "yy zz").unwrap(), a);
    assert_eq!(first.requests(), 1);

    let second = RemoteProvider::new(spec).unwrap();
    assert_eq!(second.logprobs("x ", "yy zz").unwrap(), a);
    assert_eq!(second.requests(), 0);
    mock.assert();
}

#[test]
fn relabelled_model_misses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut server = mockito::Server::new();
    let mock = server
        .mock("POST", "/v1/completions")
        .with_body(echo_body(json!([null, -0.5]), json!([0, 2])))
        .expect(2)
        .create();
    let mut p = RemoteProvider::new(RemoteSpec {
        cache_dir: Some(dir.path().to_path_buf()),
        ..spec(&server)
    })
    .unwrap();
    assert_eq!(p.version().as_str(), "m@base");
    p.logprobs("x ", "yy").unwrap();
    p.relabel("ckpt-1").unwrap();
    assert_eq!(p.version().as_str(), "m@ckpt-1");
    p.logprobs("x ", "yy").unwrap();
    assert_eq!(p.requests(), 2);
    mock.assert();
}

#[test]
fn transient_failures_are_retried() {
    let mut server = mockito::Server::new();
    let busy = server
        .mock("POST", "/v1/completions")
        .with_status(503)
        .expect(2)
        .create();
    let ok = server
        .mock("POST", "/v1/completions")
        .with_body(echo_body(json!([null, -0.5]), json!([0, 1])))
        .expect(1)
        .create();
    let p = RemoteProvider::new(spec(&server)).unwrap();
    assert_eq!(p.logprobs("A", "B").unwrap().values(), &[-0.5]);
    assert_eq!(p.requests(), 3);
    busy.assert();
    ok.assert();
}

#[test]
fn retries_are_bounded() {
    let mut server = mockito::Server::new();
    let _m = server
        .mock("POST", "/v1/completions")
        .with_status(429)
        .expect(3)
        .create();
    let p = RemoteProvider::new(RemoteSpec {
        max_retries: 2,
        ..spec(&server)
    })
    .unwrap();
    assert!(matches!(
        p.logprobs("A", "B"),
        Err(ScoreError::Transport { attempts: 3, .. })
    ));
}

#[test]
fn client_errors_are_not_retried() {
    let mut server = mockito::Server::new();
    let m = server
        .mock("POST", "/v1/completions")
        .with_status(400)
        .with_body("bad model")
        .expect(1)
        .create();
    let p = RemoteProvider::new(spec(&server)).unwrap();
    assert_eq!(
        p.logprobs("A", "B"),
        Err(ScoreError::Http {
            status: 400,
            body: "bad model".into()
        })
    );
    m.assert();
}

#[test]
fn api_key_is_sent_as_bearer_token() {
    let mut server = mockito::Server::new();
    let m = server
        .mock("POST", "/v1/completions")
        .match_header("authorization", "Bearer sekrit")
        .with_body(echo_body(json!([null, -0.5]), json!([0, 1])))
        .expect(1)
        .create();
    std::env::set_var("DATASIFT_TEST_REMOTE_KEY", "sekrit");
    let p = RemoteProvider::new(RemoteSpec {
        api_key_env: "DATASIFT_TEST_REMOTE_KEY".into(),
        ..spec(&server)
    })
    .unwrap();
    p.logprobs("A", "B").unwrap();
    m.assert();
}

#[test]
fn empty_continuation_never_reaches_the_network() {
    let server = mockito::Server::new();
    let p = RemoteProvider::new(spec(&server)).unwrap();
    assert_eq!(p.logprobs("ctx", " "), Err(ScoreError::EmptyContinuation));
    assert_eq!(p.requests(), 0);
}

#[test]
fn scoring_a_pool_against_an_endpoint() {
    let mut server = mockito::Server::new();
    let _m = fake_endpoint(&mut server);
    let corpus = load("corpus_10.jsonl");
    let p = RemoteProvider::new(spec(&server)).unwrap();
    let pool: Vec<_> = corpus.samples().iter().collect();
    let scoring = score_pool(&pool, &p, &Template::default()).unwrap();
    assert_eq!(scoring.table.len(), 10);
    assert_eq!(scoring.calls, 20);
    assert_eq!(p.requests(), 20);
    assert_eq!(scoring.table.version.as_str(), "m@base");
}
