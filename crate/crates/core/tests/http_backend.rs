use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use clinicsim_core::backend::{
    Backend, BackendConfig, BackendError, BackendKind, CompletionRequest, HttpBackend, TemplateId,
};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves the canned `(status, body)` replies in order, one per connection.
fn serve(replies: Vec<(u16, Value)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = match listener.accept() {
                Ok(s) => s,
                Err(_) => return,
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (name, value) = h.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&body).unwrap_or(Value::Null),
            });
            let text = reply.to_string();
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            )
            .unwrap();
            out.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn config(endpoint: &str, key_var: &str) -> BackendConfig {
    let mut c = BackendConfig::scripted("unused");
    c.kind = BackendKind::Http;
    c.script_path = None;
    c.endpoint_url = endpoint.to_string();
    c.api_key_env_name = key_var.to_string();
    c.model_name = "chat-model".into();
    c.embed_model_name = "embed-model".into();
    c.max_retries = 2;
    c.retry_backoff_ms = 1;
    c.request_timeout_secs = 5;
    c
}

fn request(n: usize) -> CompletionRequest {
    CompletionRequest {
        template_id: TemplateId::Diagnosis,
        case_id: "c1".into(),
        turn_index: 0,
        sample_offset: 0,
        rendered_prompt: "diagnose this".into(),
        sample_count: n,
        temperature: 1.0,
        seed: Some(9),
    }
}

fn choices(texts: &[&str]) -> Value {
    json!({ "choices": texts.iter().map(|t| json!({"message": {"role": "assistant", "content": t}})).collect::<Vec<_>>() })
}

#[test]
fn completion_sends_key_model_and_sample_count() {
    std::env::set_var("CLINICSIM_TEST_KEY_A", "secret-a");
    let (url, seen) = serve(vec![(200, choices(&["one", "two", "three"]))]);
    let b = HttpBackend::new(config(&url, "CLINICSIM_TEST_KEY_A")).unwrap();
    let out = b.complete(&request(3)).unwrap();
    assert_eq!(out, ["one", "two", "three"]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer secret-a"));
    assert_eq!(seen[0].body["model"], "chat-model");
    assert_eq!(seen[0].body["n"], 3);
    assert_eq!(seen[0].body["seed"], 9);
    assert_eq!(seen[0].body["messages"][0]["content"], "diagnose this");
}

#[test]
fn service_ignoring_n_is_asked_again() {
    std::env::set_var("CLINICSIM_TEST_KEY_B", "k");
    let (url, seen) = serve(vec![(200, choices(&["a"])), (200, choices(&["b"])), (200, choices(&["c"]))]);
    let b = HttpBackend::new(config(&url, "CLINICSIM_TEST_KEY_B")).unwrap();
    assert_eq!(b.complete(&request(3)).unwrap(), ["a", "b", "c"]);
    let n: Vec<Value> = seen.lock().unwrap().iter().map(|s| s.body["n"].clone()).collect();
    assert_eq!(n, [json!(3), json!(2), json!(1)]);
}

#[test]
fn transient_errors_are_retried() {
    std::env::set_var("CLINICSIM_TEST_KEY_C", "k");
    let (url, seen) = serve(vec![
        (503, json!({"error": "busy"})),
        (429, json!({"error": "slow down"})),
        (200, choices(&["ok"])),
    ]);
    let b = HttpBackend::new(config(&url, "CLINICSIM_TEST_KEY_C")).unwrap();
    assert_eq!(b.complete(&request(1)).unwrap(), ["ok"]);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    std::env::set_var("CLINICSIM_TEST_KEY_D", "k");
    let (url, seen) = serve(vec![(400, json!({"error": "bad request"})), (200, choices(&["never"]))]);
    let b = HttpBackend::new(config(&url, "CLINICSIM_TEST_KEY_D")).unwrap();
    assert!(matches!(b.complete(&request(1)), Err(BackendError::Protocol(m)) if m.contains("400")));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_reply_is_protocol_error() {
    std::env::set_var("CLINICSIM_TEST_KEY_E", "k");
    let (url, _) = serve(vec![(200, json!({"nothing": true}))]);
    let b = HttpBackend::new(config(&url, "CLINICSIM_TEST_KEY_E")).unwrap();
    assert!(matches!(b.complete(&request(1)), Err(BackendError::Protocol(_))));
}

#[test]
fn embeddings_are_parsed() {
    std::env::set_var("CLINICSIM_TEST_KEY_F", "k");
    let (url, seen) = serve(vec![(200, json!({"data": [{"embedding": [0.25, -0.5, 1.0]}]}))]);
    let b = HttpBackend::new(config(&url, "CLINICSIM_TEST_KEY_F")).unwrap();
    let e = b.embed("low mood").unwrap();
    assert_eq!(e.as_slice(), &[0.25, -0.5, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["model"], "embed-model");
    assert_eq!(seen[0].body["input"], "low mood");
    assert_eq!(b.embed("   "), Err(BackendError::EmptyText));
}

#[test]
fn dead_endpoint_is_unavailable_after_retries() {
    std::env::set_var("CLINICSIM_TEST_KEY_G", "k");
    let b = HttpBackend::new(config("http://127.0.0.1:1", "CLINICSIM_TEST_KEY_G")).unwrap();
    match b.complete(&request(1)) {
        Err(BackendError::Unavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Unavailable, got {other:?}"),
    }
}

#[test]
fn missing_key_variable_is_a_config_error() {
    let r = HttpBackend::new(config("http://127.0.0.1:1", "CLINICSIM_TEST_KEY_NEVER_SET"));
    assert!(matches!(r, Err(BackendError::Config(m)) if m.contains("CLINICSIM_TEST_KEY_NEVER_SET")));
}
