use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use infuse_core::orchestrator::{
    run_batch, BatchOptions, BatchSample, Clock, Endpoint, EndpointConfig, ErrorClass, HttpEndpoint, PromptBundle,
    RunStore,
};
use serde_json::Value;

struct Captured {
    headers: Vec<String>,
    body: Value,
}

/// Serves one scripted `(status, body)` reply per connection, in order, and
/// records what was received.
fn scripted_server(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, reply) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Captured {
                headers,
                body: serde_json::from_slice(&body).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn ok_reply(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn config(url: &str) -> EndpointConfig {
    EndpointConfig {
        base_url: url.to_string(),
        model: "test-model".into(),
        timeout_secs: 5,
        parallelism: 1,
        retry_budget: 3,
        backoff_ms: 1,
        max_consecutive_failures: 3,
    }
}

#[test]
fn wire_format_and_bearer_token() {
    let (url, seen) = scripted_server(vec![(200, ok_reply("2"))]);
    let ep = HttpEndpoint::new(&config(&url), Some("sekret".into()));
    let bundle = PromptBundle::plain("https://example.org/a.jpg", "How many people?");
    assert_eq!(ep.complete(&bundle, "How many people?").unwrap(), "2");

    let seen = seen.lock().unwrap();
    let req = &seen[0];
    assert!(req.headers[0].starts_with("POST /v1/chat/completions "), "{:?}", req.headers[0]);
    assert!(req.headers.iter().any(|h| h == "authorization: Bearer sekret" || h == "Authorization: Bearer sekret"));
    assert_eq!(req.body["model"], "test-model");
    assert_eq!(req.body["temperature"], 0.0);
    let content = req.body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(content[0]["image_url"]["url"], "https://example.org/a.jpg");
    assert_eq!(content[1], serde_json::json!({"type": "text", "text": "How many people?"}));
}

#[test]
fn server_errors_are_retried_within_budget() {
    let (url, seen) = scripted_server(vec![
        (503, "busy".into()),
        (502, "busy".into()),
        (200, ok_reply("yes")),
    ]);
    let ep = HttpEndpoint::new(&config(&url), None);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path().join("runs.jsonl")).unwrap();
    let samples = [BatchSample {
        sample_id: "s1".into(),
        bundle: PromptBundle::plain("", "Is there a cake?"),
    }];
    let opts = BatchOptions {
        clock: Clock::Frozen,
        ..BatchOptions::from(&config(&url))
    };
    let report = run_batch(&samples, &ep, &opts, &store, "fp").unwrap();
    assert_eq!(report.records.len(), 1);
    let rec = &report.records[0];
    assert!(rec.is_success());
    assert_eq!(rec.response.as_deref(), Some("yes"));
    assert_eq!(rec.attempts, 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(store.len(), 1);
}

#[test]
fn client_errors_and_bad_replies_are_recorded_per_sample() {
    let (url, _) = scripted_server(vec![(400, "bad request".into()), (200, "{\"choices\": []}".into())]);
    let ep = HttpEndpoint::new(&config(&url), None);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path().join("runs.jsonl")).unwrap();
    let samples: Vec<_> = ["a", "b"]
        .iter()
        .map(|id| BatchSample {
            sample_id: id.to_string(),
            bundle: PromptBundle::plain("", "Q"),
        })
        .collect();
    let report = run_batch(&samples, &ep, &BatchOptions::from(&config(&url)), &store, "fp").unwrap();
    assert_eq!(report.failed, 2);
    let a = report.records[0].error.as_ref().unwrap();
    assert_eq!((a.class, a.status), (ErrorClass::Status, Some(400)));
    assert_eq!(report.records[0].attempts, 1);
    assert_eq!(report.records[1].error.as_ref().unwrap().class, ErrorClass::Protocol);
    assert_eq!(store.len(), 2);
}

#[test]
fn unreachable_endpoint_aborts_the_run() {
    // Bind then drop, so the port is very likely closed.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = config(&format!("http://127.0.0.1:{port}/v1"));
    cfg.retry_budget = 0;
    cfg.max_consecutive_failures = 2;
    let ep = HttpEndpoint::new(&cfg, None);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path().join("runs.jsonl")).unwrap();
    let samples: Vec<_> = (0..10)
        .map(|i| BatchSample {
            sample_id: format!("s{i}"),
            bundle: PromptBundle::plain("", "Q"),
        })
        .collect();
    let err = run_batch(&samples, &ep, &BatchOptions::from(&cfg), &store, "fp").unwrap_err();
    assert!(matches!(err, infuse_core::Error::Aborted { consecutive: 2, .. }), "{err}");
    assert!(store.is_empty(), "transport failures are not persisted");
}
