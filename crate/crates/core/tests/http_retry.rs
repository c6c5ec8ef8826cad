//! Retry behavior of the HTTP provider against a local stub server that
//! counts requests and replays a scripted status sequence.

mod common;

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use examiner_core::prompts::build_initial_prompt;
use examiner_core::provider::{ChatProvider, ChatRequest, HttpProvider, ModelEndpoint, ProviderError};

#[derive(Clone, Copy)]
enum Canned {
    Status(u16),
    OkText(&'static str),
}

/// Serves one scripted response per connection, then exits.
fn spawn_stub(script: Vec<Canned>) -> (String, Arc<AtomicU32>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicU32::new(0));
    let hits_clone = hits.clone();
    std::thread::spawn(move || {
        for canned in script {
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            hits_clone.fetch_add(1, Ordering::SeqCst);
            drain_request(&mut stream);
            let response = match canned {
                Canned::Status(code) => format!(
                    "HTTP/1.1 {code} Scripted\r\ncontent-length: 0\r\nconnection: close\r\n\r\n"
                ),
                Canned::OkText(text) => {
                    let body = format!(
                        r#"{{"choices":[{{"message":{{"role":"assistant","content":"{text}"}}}}],"usage":{{"prompt_tokens":1,"completion_tokens":1}}}}"#
                    );
                    format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                        body.len()
                    )
                }
            };
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}"), hits)
}

/// Reads request headers plus the content-length body.
fn drain_request(stream: &mut TcpStream) {
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    while !buf.ends_with(b"\r\n\r\n") {
        match stream.read(&mut byte) {
            Ok(1) => buf.push(byte[0]),
            _ => return,
        }
    }
    let headers = String::from_utf8_lossy(&buf).to_lowercase();
    let content_length: usize = headers
        .lines()
        .find_map(|l| l.strip_prefix("content-length:"))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; content_length];
    let _ = stream.read_exact(&mut body);
}

fn request_for(base_url: &str, max_retries: u32) -> ChatRequest {
    let mut endpoint = ModelEndpoint::new(base_url, "stub-model");
    endpoint.max_retries = max_retries;
    endpoint.retry_base_delay = Duration::from_millis(5);
    endpoint.timeout = Duration::from_secs(5);
    let item = common::essay_item("retry-item", vec![common::url_image("retry")]);
    ChatRequest { endpoint, bundle: build_initial_prompt(&item) }
}

#[test]
fn rate_limited_twice_then_success() {
    let (base, hits) = spawn_stub(vec![Canned::Status(429), Canned::Status(429), Canned::OkText("ok")]);
    let provider = HttpProvider::new();
    let resp = provider.send_chat(&request_for(&base, 3)).unwrap();
    assert_eq!(resp.text, "ok");
    assert_eq!(hits.load(Ordering::SeqCst), 3, "initial attempt plus two retries");
}

#[test]
fn server_errors_are_retried() {
    let (base, hits) = spawn_stub(vec![Canned::Status(500), Canned::OkText("recovered")]);
    let provider = HttpProvider::new();
    let resp = provider.send_chat(&request_for(&base, 2)).unwrap();
    assert_eq!(resp.text, "recovered");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn rate_limit_exhaustion_reports_rate_limited() {
    let (base, hits) = spawn_stub(vec![Canned::Status(429); 3]);
    let provider = HttpProvider::new();
    let err = provider.send_chat(&request_for(&base, 2)).unwrap_err();
    assert!(matches!(err, ProviderError::RateLimited { retries: 2, .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_other_than_429_never_retry() {
    let (base, hits) = spawn_stub(vec![Canned::Status(400), Canned::OkText("unreachable")]);
    let provider = HttpProvider::new();
    let err = provider.send_chat(&request_for(&base, 3)).unwrap_err();
    assert!(matches!(err, ProviderError::Transport(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 1, "no retry on plain 4xx");
}

#[test]
fn forbidden_maps_to_auth_error_without_retry() {
    let (base, hits) = spawn_stub(vec![Canned::Status(403), Canned::OkText("unreachable")]);
    let provider = HttpProvider::new();
    let err = provider.send_chat(&request_for(&base, 3)).unwrap_err();
    assert!(matches!(err, ProviderError::Auth(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn connection_failure_is_transport_error() {
    // Nothing listens on this port; connect errors burn through retries.
    let provider = HttpProvider::new();
    let err = provider.send_chat(&request_for("http://127.0.0.1:9", 1)).unwrap_err();
    assert!(matches!(err, ProviderError::Transport(_)));
}
