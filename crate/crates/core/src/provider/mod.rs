//! Transport layer: the OpenAI-compatible chat-completions client, a
//! deterministic mock for offline runs, and content-addressed request
//! fingerprints shared by both (and by the response cache).

mod http;
mod mock;
pub mod spec;

pub use http::HttpProvider;
pub use mock::{MockFallback, MockProvider, MockScriptFile};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::{PromptBundle, Segment};
use crate::domain::ImageSource;

/// Prefix marking an endpoint as served by the mock provider.
pub const MOCK_SCHEME: &str = "mock:";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("auth failure: {0}")]
    Auth(String),
    #[error("rate limited after {retries} retries: {detail}")]
    RateLimited { retries: u32, detail: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("reading image {path}: {message}")]
    ImageRead { path: String, message: String },
    #[error("no mock provider configured for endpoint {0}")]
    NoMockBackend(String),
}

/// Connection and decoding settings for one chat-completions endpoint.
/// Student and teacher roles are just two of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_ref: Option<String>,
    pub temperature: f64,
    pub max_retries: u32,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    /// First retry delay; doubles per attempt (with jitter).
    #[serde(with = "duration_secs")]
    pub retry_base_delay: Duration,
    /// Cap on concurrent in-flight requests to this endpoint.
    pub max_in_flight: usize,
}

mod duration_secs {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs))
    }
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        ModelEndpoint {
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key_ref: None,
            temperature: 0.0,
            max_retries: 3,
            timeout: Duration::from_secs(120),
            retry_base_delay: Duration::from_secs(1),
            max_in_flight: 4,
        }
    }

    /// A mock-backed endpoint; `model_id` keys the mock script selection.
    pub fn mock(model_id: impl Into<String>) -> Self {
        ModelEndpoint::new(MOCK_SCHEME, model_id)
    }

    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with(MOCK_SCHEME)
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub endpoint: ModelEndpoint,
    pub bundle: PromptBundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub latency: Duration,
}

/// A chat backend. Implementations must be shareable across worker threads.
pub trait ChatProvider: Send + Sync {
    fn send_chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// Requests actually answered by this provider (cache hits excluded).
    fn call_count(&self) -> u64;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn send_chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).send_chat(req)
    }

    fn call_count(&self) -> u64 {
        (**self).call_count()
    }
}

/// Stable content hash of a request: model id, temperature, and the prompt
/// bundle with image bytes replaced by their digests. No timestamps or
/// paths, so the value survives process restarts and file moves.
pub fn fingerprint(req: &ChatRequest) -> Result<String, ProviderError> {
    let mut canonical = String::new();
    push_field(&mut canonical, "model", &req.endpoint.model_id);
    push_field(&mut canonical, "temperature", &format!("{}", req.endpoint.temperature));
    push_field(&mut canonical, "task", &req.bundle.task_text);
    for seg in &req.bundle.segments {
        match seg {
            Segment::Text(t) => push_field(&mut canonical, "text", t),
            Segment::Image(img) => {
                let content_key = match &img.source {
                    ImageSource::Url { url } => format!("url:{url}"),
                    ImageSource::Path { path } => {
                        let bytes = read_image(path)?;
                        format!("sha256:{}", hex::encode(Sha256::digest(&bytes)))
                    }
                };
                push_field(&mut canonical, "image", &format!("{}|{}", img.media_type, content_key));
            }
        }
    }
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

// Length-prefixed fields make the canonical string injective.
fn push_field(out: &mut String, tag: &str, value: &str) {
    write!(out, "{tag}:{}:", value.len()).expect("string write");
    out.push_str(value);
    out.push('\n');
}

pub(crate) fn read_image(path: &Path) -> Result<Vec<u8>, ProviderError> {
    std::fs::read(path).map_err(|e| ProviderError::ImageRead {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Routes requests to the mock registered for the endpoint's model id, or to
/// the HTTP client for everything else.
pub struct Router {
    http: HttpProvider,
    mocks: HashMap<String, MockProvider>,
}

impl Router {
    pub fn new() -> Self {
        Router { http: HttpProvider::new(), mocks: HashMap::new() }
    }

    pub fn with_mock(mut self, model_id: impl Into<String>, mock: MockProvider) -> Self {
        self.mocks.insert(model_id.into(), mock);
        self
    }
}

impl Default for Router {
    fn default() -> Self {
        Router::new()
    }
}

impl ChatProvider for Router {
    fn send_chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if req.endpoint.is_mock() {
            let mock = self
                .mocks
                .get(&req.endpoint.model_id)
                .ok_or_else(|| ProviderError::NoMockBackend(req.endpoint.model_id.clone()))?;
            mock.send_chat(req)
        } else {
            self.http.send_chat(req)
        }
    }

    fn call_count(&self) -> u64 {
        self.http.call_count() + self.mocks.values().map(|m| m.call_count()).sum::<u64>()
    }
}
