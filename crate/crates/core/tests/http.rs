mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use capqa::backend::{ChatBackend, OpenAiBackend, RecordCache};
use capqa::clock::{Clock, SimClock};
use capqa::corpus::{ClipSpec, CorpusError, RemoteCaptionSource};
use capqa::retry::RetryPolicy;
use capqa::runner::{self, BackendConfig, RunOptions, SynthSpec};
use capqa::{ChatTurn, CompletionRequest, Executor, RatePolicy, Strategy};

#[derive(Clone)]
struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

fn reply(status: u16, body: &str) -> Reply {
    Reply {
        status,
        body: body.to_string(),
        delay: Duration::ZERO,
    }
}

#[derive(Debug, Clone)]
struct Seen {
    body: String,
    authorization: Option<String>,
}

/// Serves scripted replies in order, repeating the last one, and records requests.
struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<Seen>>>,
    server: Arc<tiny_http::Server>,
}

impl Server {
    fn start(script: Vec<Reply>) -> Self {
        Self::start_with(move |i, _| script[i.min(script.len() - 1)].clone())
    }

    fn start_with(respond: impl Fn(usize, &str) -> Reply + Send + Sync + 'static) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let hits = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let respond = Arc::new(respond);
        let (s, h, log) = (server.clone(), hits.clone(), seen.clone());
        std::thread::spawn(move || {
            for mut request in s.incoming_requests() {
                let i = h.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                request.as_reader().read_to_string(&mut body).unwrap();
                let authorization = request
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.to_string());
                log.lock().unwrap().push(Seen {
                    body: body.clone(),
                    authorization,
                });
                let r = respond(i, &body);
                std::thread::spawn(move || {
                    std::thread::sleep(r.delay);
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                    let resp = tiny_http::Response::from_string(r.body)
                        .with_status_code(r.status)
                        .with_header(header);
                    let _ = request.respond(resp);
                });
            }
        });
        Self {
            url: format!("http://127.0.0.1:{port}"),
            hits,
            seen,
            server,
        }
    }

    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.server.unblock();
    }
}

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_delay_ms: 5,
        max_delay_ms: 20,
        jitter_fraction: 0.0,
    }
}

fn spec() -> ClipSpec {
    ClipSpec {
        start_s: 0.0,
        end_s: 2.0,
        native_clip_length_s: 1.0,
    }
}

const TWO_CLIPS: &str = r#"{"clips":[{"start_s":1,"end_s":2,"text":"C cuts the onion"},{"start_s":0,"end_s":1,"text":"C picks up a knife"}]}"#;

#[test]
fn caption_fetch_retries_then_caches() {
    let server = Server::start(vec![reply(503, "busy"), reply(503, "busy"), reply(200, TWO_CLIPS)]);
    let cache = tempfile::tempdir().unwrap();
    let source = RemoteCaptionSource::new(format!("{}/captions", server.url), Duration::from_secs(5), fast_retry(5))
        .with_cache_dir(cache.path());
    let fetched = source.fetch("vid/1", &spec()).unwrap();
    assert_eq!(fetched.attempts, 3);
    let texts: Vec<&str> = fetched.track.clips.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, ["C picks up a knife", "C cuts the onion"]);
    let sent: serde_json::Value = serde_json::from_str(&server.seen.lock().unwrap()[0].body).unwrap();
    assert_eq!(sent, serde_json::json!({"video_id": "vid/1", "start_s": 0.0, "end_s": 2.0}));

    let again = source.fetch("vid/1", &spec()).unwrap();
    assert_eq!(again.attempts, 0);
    assert_eq!(again.track, fetched.track);
    assert_eq!(server.hits(), 3);
}

#[test]
fn caption_fetch_recovers_from_timeout() {
    let slow = Reply {
        delay: Duration::from_millis(800),
        ..reply(200, TWO_CLIPS)
    };
    let server = Server::start(vec![slow, reply(200, TWO_CLIPS)]);
    let source = RemoteCaptionSource::new(server.url.clone(), Duration::from_millis(200), fast_retry(3));
    let fetched = source.fetch("v", &spec()).unwrap();
    assert_eq!(fetched.attempts, 2);
}

#[test]
fn caption_fetch_gives_up_after_budget() {
    let server = Server::start(vec![reply(500, "down")]);
    let source = RemoteCaptionSource::new(server.url.clone(), Duration::from_secs(5), fast_retry(3));
    let err = source.fetch("v", &spec()).unwrap_err();
    assert!(matches!(err, CorpusError::Transport(_)), "{err}");
    assert_eq!(server.hits(), 3);
}

#[test]
fn caption_overlap_is_schema_error_without_retry() {
    let overlap = r#"{"clips":[{"start_s":0,"end_s":2,"text":"a"},{"start_s":1,"end_s":3,"text":"b"}]}"#;
    let server = Server::start(vec![reply(200, overlap)]);
    let source = RemoteCaptionSource::new(server.url.clone(), Duration::from_secs(5), fast_retry(5));
    let err = source.fetch("v", &spec()).unwrap_err();
    assert!(matches!(err, CorpusError::Schema(_)), "{err}");
    assert_eq!(server.hits(), 1);
}

#[test]
fn caption_client_error_is_fatal() {
    let server = Server::start(vec![reply(404, "no such video")]);
    let source = RemoteCaptionSource::new(server.url.clone(), Duration::from_secs(5), fast_retry(5));
    assert!(source.fetch("v", &spec()).is_err());
    assert_eq!(server.hits(), 1);
}

fn completion(text: &str) -> String {
    serde_json::json!({
        "id": "cmpl-1",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 42, "completion_tokens": 1, "total_tokens": 43}
    })
    .to_string()
}

fn request(text: &str) -> CompletionRequest {
    CompletionRequest {
        model: "gpt-4-1106-preview".into(),
        turns: vec![ChatTurn::user(text).unwrap()],
        temperature: 0.0,
        max_output_tokens: Some(16),
    }
}

#[test]
fn openai_backend_wire_format() {
    let server = Server::start(vec![reply(200, &completion("B"))]);
    let backend = OpenAiBackend::new(&format!("{}/v1/", server.url), Some("sk-test".into()), Duration::from_secs(5));
    assert_eq!(backend.id(), format!("openai:{}/v1", server.url));
    let resp = backend.send(&request("Which letter?")).unwrap();
    assert_eq!(resp.text, "B");
    assert_eq!(resp.usage.unwrap().prompt_tokens, 42);
    let seen = server.seen.lock().unwrap()[0].clone();
    assert_eq!(seen.authorization.as_deref(), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&seen.body).unwrap();
    assert_eq!(
        body,
        serde_json::json!({
            "model": "gpt-4-1106-preview",
            "messages": [{"role": "user", "content": "Which letter?"}],
            "temperature": 0.0,
            "max_tokens": 16
        })
    );
}

#[test]
fn openai_backend_retries_rate_limit_through_executor() {
    let server = Server::start(vec![reply(429, "slow down"), reply(502, "bad gateway"), reply(200, &completion("C"))]);
    let backend = Arc::new(OpenAiBackend::new(&server.url, None, Duration::from_secs(5)));
    let policy = RatePolicy {
        retry: RetryPolicy {
            max_attempts: 4,
            base_delay_ms: 1000,
            max_delay_ms: 8000,
            jitter_fraction: 0.0,
        },
        ..RatePolicy::default()
    };
    let clock = Arc::new(SimClock::new());
    let exec = Executor::live(backend, Arc::new(RecordCache::in_memory()), &policy)
        .with_clock(clock.clone() as Arc<dyn Clock>, &policy);
    let out = exec.complete(&request("q")).unwrap();
    assert_eq!(out.record.response_text, "C");
    assert_eq!(out.record.attempts, 3);
    assert!(!out.record.tokens_estimated);
    assert_eq!(clock.now(), Duration::from_secs(3));
}

#[test]
fn openai_backend_client_error_not_retried() {
    let server = Server::start(vec![reply(401, r#"{"error":"bad key"}"#)]);
    let backend = Arc::new(OpenAiBackend::new(&server.url, None, Duration::from_secs(5)));
    let policy = RatePolicy::default();
    let exec = Executor::live(backend, Arc::new(RecordCache::in_memory()), &policy)
        .with_clock(Arc::new(SimClock::new()), &policy);
    assert!(exec.complete(&request("q")).is_err());
    assert_eq!(server.hits(), 1);
}

#[test]
fn live_run_then_offline_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, corpus) = common::mock_experiment(dir.path(), &SynthSpec::default(), Strategy::Standard);
    let book = capqa::backend::Rulebook::load(&corpus.rulebook).unwrap();
    let server = Server::start_with(move |_, body| {
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        let text = v["messages"][0]["content"].as_str().unwrap();
        let req = CompletionRequest {
            model: "m".into(),
            turns: vec![ChatTurn::user(text).unwrap()],
            temperature: 0.0,
            max_output_tokens: None,
        };
        reply(200, &completion(book.respond(&req)))
    });
    cfg.backend = BackendConfig::Live {
        base_url: server.url.clone(),
        api_key: None,
        timeout_s: 5,
        backend_id: None,
    };
    cfg.workers = 4;
    let live = runner::run_with(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(server.hits(), 10);
    assert_eq!(live.manifest.network_attempts, 10);
    let summary = std::fs::read(cfg.output_dir.join(runner::SUMMARY_FILE)).unwrap();
    drop(server);

    let mut replay = cfg.clone();
    replay.backend = BackendConfig::Replay {
        backend_id: live.manifest.backend_id.clone(),
    };
    replay.output_dir = dir.path().join("replay");
    let replayed = runner::run(&replay).unwrap();
    assert_eq!(replayed.manifest.network_attempts, 0);
    assert_eq!(std::fs::read(replay.output_dir.join(runner::SUMMARY_FILE)).unwrap(), summary);
}
