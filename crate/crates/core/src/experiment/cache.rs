//! Content-addressed response cache: one JSON file per request fingerprint.
//! Reads are lock-free; writes go through a unique temp file and an atomic
//! rename, so concurrent writers of the same key cannot interleave.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::provider::{fingerprint, ChatProvider, ChatRequest, ChatResponse, ProviderError, TokenUsage};

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    fingerprint: String,
    model_id: String,
    text: String,
    usage: Option<TokenUsage>,
}

/// Wraps a provider with a directory-backed cache keyed by request
/// fingerprint. Hits never touch the inner provider.
pub struct CachedProvider<P> {
    inner: P,
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl<P: ChatProvider> CachedProvider<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CachedProvider { inner, dir, tmp_counter: AtomicU64::new(0) })
    }

    fn entry_path(&self, fp: &str) -> PathBuf {
        self.dir.join(format!("{fp}.json"))
    }

    fn load(&self, fp: &str) -> Option<CacheEntry> {
        let bytes = std::fs::read(self.entry_path(fp)).ok()?;
        // A corrupt entry is treated as a miss and rewritten.
        serde_json::from_slice(&bytes).ok()
    }

    fn store(&self, entry: &CacheEntry) -> Result<(), ProviderError> {
        let tmp = self.dir.join(format!(
            ".tmp-{}-{}-{}",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed),
            entry.fingerprint
        ));
        let write = || -> std::io::Result<()> {
            let bytes = serde_json::to_vec_pretty(entry)?;
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, self.entry_path(&entry.fingerprint))
        };
        write().map_err(|e| ProviderError::Transport(format!("cache write: {e}")))
    }
}

impl<P: ChatProvider> ChatProvider for CachedProvider<P> {
    fn send_chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let fp = fingerprint(req)?;
        if let Some(entry) = self.load(&fp) {
            return Ok(ChatResponse {
                text: entry.text,
                usage: entry.usage,
                latency: Duration::ZERO,
            });
        }
        let response = self.inner.send_chat(req)?;
        self.store(&CacheEntry {
            fingerprint: fp,
            model_id: req.endpoint.model_id.clone(),
            text: response.text.clone(),
            usage: response.usage,
        })?;
        Ok(response)
    }

    fn call_count(&self) -> u64 {
        self.inner.call_count()
    }
}

/// Lists cached fingerprints, mostly for diagnostics.
pub fn cached_fingerprints(dir: &Path) -> std::io::Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
            out.push(stem.to_string());
        }
    }
    out.sort();
    Ok(out)
}
