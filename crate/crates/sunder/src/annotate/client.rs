//! Chat-completion clients: a live HTTP client, a deterministic replay
//! client backed by a fixture file, and a recorder that captures live
//! responses into that fixture format.
//!
//! Fixture entries are keyed by a digest of `(model, prompt, temperature)`,
//! so recorded responses survive refactors that do not change the rendered
//! prompt. Replay mode never falls through to the network: a missing entry
//! is a hard [`Error::FixtureMiss`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const API_KEY_ENV: &str = "SUNDER_API_KEY";
pub const ENDPOINT_ENV: &str = "SUNDER_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
}

/// Stable digest of a request: hex SHA-256 over model, prompt, temperature.
pub fn request_digest(req: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(req.model.as_bytes());
    hasher.update([0]);
    hasher.update(req.prompt.as_bytes());
    hasher.update([0]);
    hasher.update(format!("{:.6}", req.temperature).as_bytes());
    hex::encode(hasher.finalize())
}

pub trait ChatClient {
    fn complete(&self, req: &ChatRequest) -> Result<String>;
}

/// Retries transport failures with linear backoff; fixture misses and other
/// errors are returned immediately. The final error reports how many
/// attempts were made.
pub fn complete_with_retries<C: ChatClient + ?Sized>(
    client: &C,
    req: &ChatRequest,
    max_attempts: usize,
) -> Result<String> {
    let attempts = max_attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        match client.complete(req) {
            Ok(response) => return Ok(response),
            Err(Error::Client(msg)) => {
                log::warn!("chat completion attempt {attempt}/{attempts} failed: {msg}");
                last = Some(msg);
                if attempt < attempts {
                    std::thread::sleep(Duration::from_millis(200 * attempt as u64));
                }
            }
            Err(other) => return Err(other),
        }
    }
    Err(Error::client(format!(
        "giving up after {attempts} attempts: {}",
        last.unwrap_or_default()
    )))
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureFile {
    version: u32,
    /// digest -> canned response text
    entries: BTreeMap<String, String>,
}

impl FixtureFile {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::client(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        let file: FixtureFile = serde_json::from_str(&text)
            .map_err(|e| Error::client(format!("malformed fixture {}: {e}", path.display())))?;
        if file.version != FIXTURE_VERSION {
            return Err(Error::client(format!(
                "fixture {} has version {} (expected {FIXTURE_VERSION})",
                path.display(),
                file.version
            )));
        }
        Ok(file)
    }

    fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Deterministic fixture-backed client. Never performs network I/O.
#[derive(Debug)]
pub struct ReplayClient {
    entries: BTreeMap<String, String>,
}

impl ReplayClient {
    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(ReplayClient { entries: FixtureFile::load(path)?.entries })
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Self {
        ReplayClient { entries }
    }

    /// Authoring helper: canned response for a request.
    pub fn insert(&mut self, req: &ChatRequest, response: impl Into<String>) {
        self.entries.insert(request_digest(req), response.into());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        FixtureFile { version: FIXTURE_VERSION, entries: self.entries.clone() }.save(path)
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let digest = request_digest(req);
        match self.entries.get(&digest) {
            Some(response) => Ok(response.clone()),
            None => Err(Error::FixtureMiss {
                digest,
                summary: format!(
                    "model {}, prompt of {} chars",
                    req.model,
                    req.prompt.len()
                ),
            }),
        }
    }
}

/// Live chat-completion endpoint speaking the common `messages` JSON shape.
/// The API key comes from the environment, never from flags or files.
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint_override: Option<&str>) -> Result<Self> {
        let endpoint = endpoint_override
            .map(str::to_owned)
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .unwrap_or_else(|| DEFAULT_ENDPOINT.to_owned());
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::client(format!("cannot build http client: {e}")))?;
        Ok(HttpChatClient { endpoint, api_key: std::env::var(API_KEY_ENV).ok(), http })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
        });
        let mut http_req = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http_req = http_req.bearer_auth(key);
        }
        let response = http_req
            .send()
            .map_err(|e| Error::client(format!("request to {} failed: {e}", self.endpoint)))?;
        let status = response.status();
        let payload: serde_json::Value = response
            .json()
            .map_err(|e| Error::client(format!("non-json response ({status}): {e}")))?;
        if !status.is_success() {
            return Err(Error::client(format!("endpoint returned {status}: {payload}")));
        }
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Error::client(format!("response missing message content: {payload}")))
    }
}

/// Wraps another client and captures every successful completion into a
/// fixture file (write-through, serialized by a mutex).
pub struct RecordingClient<C> {
    inner: C,
    path: PathBuf,
    store: Mutex<FixtureFile>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C, path: PathBuf) -> Result<Self> {
        let store = if path.exists() {
            FixtureFile::load(&path)?
        } else {
            FixtureFile { version: FIXTURE_VERSION, entries: BTreeMap::new() }
        };
        Ok(RecordingClient { inner, path, store: Mutex::new(store) })
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let response = self.inner.complete(req)?;
        let mut store = self.store.lock().expect("fixture store poisoned");
        store.entries.insert(request_digest(req), response.clone());
        store.save(&self.path)?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> ChatRequest {
        ChatRequest { model: "test-model".into(), prompt: prompt.into(), temperature: 0.0 }
    }

    #[test]
    fn digest_depends_on_all_fields() {
        let base = request_digest(&req("hello"));
        assert_eq!(base, request_digest(&req("hello")));
        assert_ne!(base, request_digest(&req("hello!")));
        let mut warm = req("hello");
        warm.temperature = 0.7;
        assert_ne!(base, request_digest(&warm));
        let mut other = req("hello");
        other.model = "other".into();
        assert_ne!(base, request_digest(&other));
    }

    #[test]
    fn replay_hits_and_misses() {
        let mut client = ReplayClient::from_entries(BTreeMap::new());
        client.insert(&req("known"), "canned");
        assert_eq!(client.complete(&req("known")).unwrap(), "canned");
        match client.complete(&req("unknown")) {
            Err(Error::FixtureMiss { .. }) => {}
            other => panic!("expected fixture miss, got {other:?}"),
        }
    }

    #[test]
    fn replay_roundtrips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        let mut client = ReplayClient::from_entries(BTreeMap::new());
        client.insert(&req("a"), "first");
        client.insert(&req("b"), "second");
        client.save(&path).unwrap();
        let loaded = ReplayClient::from_path(&path).unwrap();
        assert_eq!(loaded.complete(&req("a")).unwrap(), "first");
        assert_eq!(loaded.complete(&req("b")).unwrap(), "second");
    }

    struct FlakyClient {
        failures: std::cell::Cell<usize>,
    }

    impl ChatClient for FlakyClient {
        fn complete(&self, _req: &ChatRequest) -> Result<String> {
            if self.failures.get() > 0 {
                self.failures.set(self.failures.get() - 1);
                return Err(Error::client("transient"));
            }
            Ok("ok".into())
        }
    }

    #[test]
    fn retries_transient_failures() {
        let client = FlakyClient { failures: std::cell::Cell::new(2) };
        assert_eq!(complete_with_retries(&client, &req("r"), 3).unwrap(), "ok");
        let client = FlakyClient { failures: std::cell::Cell::new(5) };
        let err = complete_with_retries(&client, &req("r"), 2).unwrap_err();
        assert!(err.to_string().contains("2 attempts"), "{err}");
    }

    #[test]
    fn fixture_miss_is_not_retried() {
        let client = ReplayClient::from_entries(BTreeMap::new());
        match complete_with_retries(&client, &req("missing"), 5) {
            Err(Error::FixtureMiss { .. }) => {}
            other => panic!("expected fixture miss, got {other:?}"),
        }
    }

    #[test]
    fn recording_client_captures_responses() {
        struct Fixed;
        impl ChatClient for Fixed {
            fn complete(&self, _req: &ChatRequest) -> Result<String> {
                Ok("live answer".into())
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recorded.json");
        let recorder = RecordingClient::new(Fixed, path.clone()).unwrap();
        assert_eq!(recorder.complete(&req("q")).unwrap(), "live answer");
        let replay = ReplayClient::from_path(&path).unwrap();
        assert_eq!(replay.complete(&req("q")).unwrap(), "live answer");
    }
}
