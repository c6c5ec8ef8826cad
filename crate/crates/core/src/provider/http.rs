//! Blocking OpenAI-compatible chat-completions client with bounded retries
//! and a per-endpoint in-flight limiter.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError, TokenUsage, read_image};
use crate::domain::ImageSource;
use crate::prompts::Segment;

pub struct HttpProvider {
    client: reqwest::blocking::Client,
    limiters: Mutex<HashMap<String, Arc<Semaphore>>>,
    calls: AtomicU64,
}

impl HttpProvider {
    pub fn new() -> Self {
        HttpProvider {
            client: reqwest::blocking::Client::new(),
            limiters: Mutex::new(HashMap::new()),
            calls: AtomicU64::new(0),
        }
    }

    fn limiter_for(&self, key: String, permits: usize) -> Arc<Semaphore> {
        let mut map = self.limiters.lock().expect("limiter lock");
        map.entry(key).or_insert_with(|| Arc::new(Semaphore::new(permits.max(1)))).clone()
    }
}

impl Default for HttpProvider {
    fn default() -> Self {
        HttpProvider::new()
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatProvider for HttpProvider {
    fn send_chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let endpoint = &req.endpoint;

        // Resolve credentials before any network traffic.
        let api_key = match &endpoint.api_key_ref {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Auth(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };

        let body = build_wire_body(req)?;
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));

        let limiter_key = format!("{}|{}", endpoint.base_url, endpoint.model_id);
        let limiter = self.limiter_for(limiter_key, endpoint.max_in_flight);
        let _permit = limiter.acquire();

        let start = Instant::now();
        let mut attempt: u32 = 0;
        loop {
            let mut builder = self
                .client
                .post(&url)
                .timeout(endpoint.timeout)
                .header("content-type", "application/json");
            if let Some(key) = &api_key {
                builder = builder.header("authorization", format!("Bearer {key}"));
            }

            match builder.json(&body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let text = resp
                            .text()
                            .map_err(|e| ProviderError::Transport(e.to_string()))?;
                        return decode_wire(&text, start.elapsed());
                    }
                    let detail = resp.text().unwrap_or_default();
                    match status.as_u16() {
                        401 | 403 => {
                            return Err(ProviderError::Auth(format!("HTTP {status}: {detail}")))
                        }
                        429 => {
                            if attempt >= endpoint.max_retries {
                                return Err(ProviderError::RateLimited {
                                    retries: attempt,
                                    detail,
                                });
                            }
                        }
                        500..=599 => {
                            if attempt >= endpoint.max_retries {
                                return Err(ProviderError::Transport(format!(
                                    "HTTP {status} after {attempt} retries: {detail}"
                                )));
                            }
                        }
                        // Other 4xx are never retried.
                        _ => {
                            return Err(ProviderError::Transport(format!(
                                "HTTP {status}: {detail}"
                            )))
                        }
                    }
                }
                Err(e) => {
                    if attempt >= endpoint.max_retries {
                        return Err(ProviderError::Transport(e.to_string()));
                    }
                }
            }

            std::thread::sleep(backoff_delay(endpoint.retry_base_delay, attempt));
            attempt += 1;
        }
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Exponential backoff: base · 2^attempt, plus up to 25% random jitter.
fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    let factor = 2f64.powi(attempt.min(16) as i32);
    let jitter = 1.0 + rand::thread_rng().gen_range(0.0..0.25);
    base.mul_f64(factor * jitter)
}

fn decode_wire(text: &str, latency: Duration) -> Result<ChatResponse, ProviderError> {
    let wire: WireResponse = serde_json::from_str(text)
        .map_err(|e| ProviderError::BadResponse(format!("{e}; body starts {:.80?}", text)))?;
    let first = wire
        .choices
        .first()
        .ok_or_else(|| ProviderError::BadResponse("no choices in response".into()))?;
    let content = first
        .message
        .content
        .clone()
        .ok_or_else(|| ProviderError::BadResponse("first choice has no content".into()))?;
    Ok(ChatResponse {
        text: content,
        usage: wire.usage.map(|u| TokenUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
        latency,
    })
}

/// Builds the `messages` payload: the task definition as the system message,
/// the segments as one user message with text and image_url parts. Local
/// images become base64 data URLs; remote URLs pass through.
fn build_wire_body(req: &ChatRequest) -> Result<serde_json::Value, ProviderError> {
    let mut parts = Vec::new();
    for seg in &req.bundle.segments {
        match seg {
            Segment::Text(t) => parts.push(json!({"type": "text", "text": t})),
            Segment::Image(img) => {
                let url = match &img.source {
                    ImageSource::Url { url } => url.clone(),
                    ImageSource::Path { path } => {
                        let bytes = read_image(path)?;
                        format!("data:{};base64,{}", img.media_type, base64_encode(&bytes))
                    }
                };
                parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
            }
        }
    }
    Ok(json!({
        "model": req.endpoint.model_id,
        "temperature": req.endpoint.temperature,
        "messages": [
            {"role": "system", "content": req.bundle.task_text},
            {"role": "user", "content": parts},
        ],
    }))
}

fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// Counting semaphore; permits return on guard drop.
struct Semaphore {
    state: Mutex<usize>,
    available: Condvar,
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { state: Mutex::new(permits), available: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.state.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard(self)
    }
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.0.state.lock().expect("semaphore lock");
        *permits += 1;
        self.0.available.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EssayItem, ImageRef};
    use crate::prompts::build_initial_prompt;
    use crate::provider::ModelEndpoint;

    fn url_image_request(endpoint: ModelEndpoint) -> ChatRequest {
        let img = ImageRef {
            source: ImageSource::Url { url: "https://example.invalid/a.png".into() },
            media_type: "image/png".into(),
        };
        let item = EssayItem::new("h1", "topic", vec![img], "essay").unwrap();
        ChatRequest { endpoint, bundle: build_initial_prompt(&item) }
    }

    #[test]
    fn missing_key_env_fails_before_network() {
        let mut ep = ModelEndpoint::new("http://127.0.0.1:1", "m");
        ep.api_key_ref = Some("EXAMINER_TEST_UNSET_KEY_VAR".into());
        let provider = HttpProvider::new();
        match provider.send_chat(&url_image_request(ep)) {
            Err(ProviderError::Auth(msg)) => {
                assert!(msg.contains("EXAMINER_TEST_UNSET_KEY_VAR"))
            }
            other => panic!("expected Auth error, got {other:?}"),
        }
    }

    #[test]
    fn wire_body_shape() {
        let req = url_image_request(ModelEndpoint::new("http://x", "model-1"));
        let body = build_wire_body(&req).unwrap();
        assert_eq!(body["model"], "model-1");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "system");
        let parts = body["messages"][1]["content"].as_array().unwrap();
        assert!(parts.iter().any(|p| p["type"] == "image_url"));
        assert!(parts.iter().any(|p| p["type"] == "text"));
    }

    #[test]
    fn data_url_for_local_images() {
        use std::io::Write as _;
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(b"fake-png").unwrap();
        let img = ImageRef {
            source: ImageSource::Path { path: file.path().to_path_buf() },
            media_type: "image/png".into(),
        };
        let item = EssayItem::new("h2", "t", vec![img], "e").unwrap();
        let req = ChatRequest {
            endpoint: ModelEndpoint::new("http://x", "m"),
            bundle: build_initial_prompt(&item),
        };
        let body = build_wire_body(&req).unwrap();
        let parts = body["messages"][1]["content"].as_array().unwrap();
        let image_part = parts.iter().find(|p| p["type"] == "image_url").unwrap();
        let url = image_part["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
    }

    #[test]
    fn decode_wire_happy_and_malformed() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let resp = decode_wire(ok, Duration::ZERO).unwrap();
        assert_eq!(resp.text, "hi");
        assert_eq!(resp.usage.unwrap().prompt_tokens, 3);

        assert!(matches!(
            decode_wire("not json", Duration::ZERO),
            Err(ProviderError::BadResponse(_))
        ));
        assert!(matches!(
            decode_wire(r#"{"choices":[]}"#, Duration::ZERO),
            Err(ProviderError::BadResponse(_))
        ));
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let sem = Arc::new(Semaphore::new(2));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let sem = sem.clone();
            let in_flight = in_flight.clone();
            let peak = peak.clone();
            handles.push(std::thread::spawn(move || {
                let _g = sem.acquire();
                let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                in_flight.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
