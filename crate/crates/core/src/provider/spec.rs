//! Model-spec strings: one flag value selects a real or mock backend.
//!
//! Real endpoints: `provider=<base-url>,model=<id>[,key-env=<VAR>]
//! [,temperature=<t>][,timeout=<secs>][,retries=<n>]`.
//! Mock endpoints: `mock` or `mock:<script-path>`; the optional script file
//! is JSON with a fallback rule and fingerprint-keyed responses.

use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use super::mock::MockScriptFile;
use super::{ModelEndpoint, Router, MOCK_SCHEME};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("model spec {spec:?}: {reason}")]
    Invalid { spec: String, reason: String },
    #[error("mock script {path}: {source}")]
    Script { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Student,
    Teacher,
}

impl Role {
    fn default_mock_id(self) -> &'static str {
        match self {
            Role::Student => "student-mock",
            Role::Teacher => "teacher-mock",
        }
    }
}

/// A parsed spec: the endpoint plus, for mock specs, the loaded script.
#[derive(Debug)]
pub struct ResolvedBackend {
    pub endpoint: ModelEndpoint,
    pub mock_script: Option<MockScriptFile>,
}

/// Parses a model-spec string. Relative mock script paths resolve against
/// `base_dir` when given (e.g. the config file's directory).
pub fn parse_model_spec(
    spec: &str,
    role: Role,
    base_dir: Option<&Path>,
) -> Result<ResolvedBackend, SpecError> {
    let spec = spec.trim();
    if spec == "mock" || spec.starts_with(MOCK_SCHEME) {
        let path_part = spec.strip_prefix(MOCK_SCHEME).unwrap_or("");
        let script = if path_part.is_empty() {
            None
        } else {
            let mut path = PathBuf::from(path_part);
            if path.is_relative() {
                if let Some(dir) = base_dir {
                    path = dir.join(path);
                }
            }
            Some(MockScriptFile::load(&path).map_err(|source| SpecError::Script {
                path: path.display().to_string(),
                source,
            })?)
        };
        return Ok(ResolvedBackend {
            endpoint: ModelEndpoint::mock(role.default_mock_id()),
            mock_script: script,
        });
    }

    let invalid = |reason: &str| SpecError::Invalid { spec: spec.to_string(), reason: reason.into() };

    let mut base_url = None;
    let mut model = None;
    let mut key_env = None;
    let mut temperature = None;
    let mut timeout = None;
    let mut retries = None;
    for field in spec.split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| invalid(&format!("field {field:?} is not key=value")))?;
        match key.trim() {
            "provider" => base_url = Some(value.trim().to_string()),
            "model" => model = Some(value.trim().to_string()),
            "key-env" => key_env = Some(value.trim().to_string()),
            "temperature" => {
                temperature =
                    Some(value.trim().parse::<f64>().map_err(|e| invalid(&e.to_string()))?)
            }
            "timeout" => {
                timeout = Some(value.trim().parse::<u64>().map_err(|e| invalid(&e.to_string()))?)
            }
            "retries" => {
                retries = Some(value.trim().parse::<u32>().map_err(|e| invalid(&e.to_string()))?)
            }
            other => return Err(invalid(&format!("unknown field {other:?}"))),
        }
    }

    let mut endpoint = ModelEndpoint::new(
        base_url.ok_or_else(|| invalid("missing provider=<base-url>"))?,
        model.ok_or_else(|| invalid("missing model=<id>"))?,
    );
    endpoint.api_key_ref = key_env;
    if let Some(t) = temperature {
        if t < 0.0 {
            return Err(invalid("temperature must be >= 0"));
        }
        endpoint.temperature = t;
    }
    if let Some(secs) = timeout {
        endpoint.timeout = Duration::from_secs(secs);
    }
    if let Some(r) = retries {
        endpoint.max_retries = r;
    }
    Ok(ResolvedBackend { endpoint, mock_script: None })
}

/// Assembles the router serving a set of parsed backends. Each mock backend
/// registers its provider under its endpoint's model id; `seed` feeds
/// echo-scores synthesis for scripts that do not pin their own.
pub fn build_router(backends: Vec<ResolvedBackend>, seed: u64) -> (Router, Vec<ModelEndpoint>) {
    let mut router = Router::new();
    let mut endpoints = Vec::new();
    for backend in backends {
        if backend.endpoint.is_mock() {
            let script = backend.mock_script.unwrap_or_else(|| MockScriptFile {
                fallback: super::mock::MockFallback::EchoScores { seed: 0 },
                responses: Default::default(),
            });
            router = router.with_mock(backend.endpoint.model_id.clone(), script.into_provider(seed));
        }
        endpoints.push(backend.endpoint);
    }
    (router, endpoints)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_real_endpoint() {
        let backend = parse_model_spec(
            "provider=https://api.example.invalid/v1,model=grader-1,key-env=GRADER_KEY,temperature=0.5",
            Role::Student,
            None,
        )
        .unwrap();
        assert_eq!(backend.endpoint.base_url, "https://api.example.invalid/v1");
        assert_eq!(backend.endpoint.model_id, "grader-1");
        assert_eq!(backend.endpoint.api_key_ref.as_deref(), Some("GRADER_KEY"));
        assert_eq!(backend.endpoint.temperature, 0.5);
        assert!(backend.mock_script.is_none());
    }

    #[test]
    fn parses_bare_mock() {
        let backend = parse_model_spec("mock", Role::Teacher, None).unwrap();
        assert!(backend.endpoint.is_mock());
        assert_eq!(backend.endpoint.model_id, "teacher-mock");
    }

    #[test]
    fn parses_mock_with_script() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("script.json"),
            r#"{"fallback": {"mode": "fixed", "text": "hello"}, "responses": {}}"#,
        )
        .unwrap();
        let backend =
            parse_model_spec("mock:script.json", Role::Student, Some(dir.path())).unwrap();
        let script = backend.mock_script.unwrap();
        assert_eq!(script.fallback, super::super::mock::MockFallback::Fixed { text: "hello".into() });
    }

    #[test]
    fn rejects_malformed_specs() {
        assert!(parse_model_spec("model=x", Role::Student, None).is_err());
        assert!(parse_model_spec("provider=http://x", Role::Student, None).is_err());
        assert!(parse_model_spec("provider=http://x,model=y,bogus=1", Role::Student, None).is_err());
        assert!(parse_model_spec("mock:/no/such/script.json", Role::Student, None).is_err());
    }
}
