//! Text-in/text-out language model backends.
//!
//! Every backend answers an [`LlmRequest`] (system + user prompt) with raw
//! text. Besides the live HTTP client there is a replay backend that serves
//! recorded responses keyed by request digest, a recorder that produces such
//! transcripts, and a scripted backend for fault injection in tests.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system: String,
    pub user: String,
}

impl LlmRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        LlmRequest {
            system: system.into(),
            user: user.into(),
        }
    }

    /// Hex SHA-256 over the system and user prompts. Model settings are not
    /// part of the digest so transcripts survive a model change.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend request failed: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no recorded response for request {digest}")]
    NotRecorded { digest: String },
    #[error("backend response could not be read: {0}")]
    BadResponse(String),
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Settings for the live backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f32,
    pub max_retries: u32,
    #[serde(default)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_retries: 2,
            api_key: None,
            timeout_secs: 120,
        }
    }
}

/// Chat-completions client for OpenAI-compatible endpoints.
pub struct HttpBackend {
    config: LlmConfig,
    // Built on first use so construction is safe inside an async runtime.
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpBackend {
    pub fn new(config: LlmConfig) -> Self {
        HttpBackend {
            config,
            client: OnceLock::new(),
        }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, BackendError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(self.client.get_or_init(|| client))
    }

    fn attempt(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        });
        let mut req = self.client()?.post(url).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::BadResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(e @ BackendError::Status { status, .. }) if status < 500 && status != 429 => {
                    return Err(e)
                }
                Err(e) => {
                    log::warn!("backend attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| BackendError::Transport("no attempt made".into())))
    }

    fn name(&self) -> &str {
        "live"
    }
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_digest: String,
    /// Free-form note on what the request was, for humans reading the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub response: String,
}

/// Ordered request-digest → response pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub version: u32,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript {
            version: 1,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, request: &LlmRequest, label: Option<&str>, response: impl Into<String>) {
        self.entries.push(TranscriptEntry {
            request_digest: request.digest(),
            label: label.map(str::to_string),
            response: response.into(),
        });
    }

    pub fn load(path: &Path) -> std::io::Result<Transcript> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

/// Serves responses from a transcript. Several entries with the same digest
/// are served in order; the last one repeats once the others are used up.
pub struct ReplayBackend {
    responses: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        let mut responses: HashMap<String, VecDeque<String>> = HashMap::new();
        for entry in transcript.entries {
            responses
                .entry(entry.request_digest)
                .or_default()
                .push_back(entry.response);
        }
        ReplayBackend {
            responses: Mutex::new(responses),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(Transcript::load(path)?))
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let digest = request.digest();
        let mut map = self.responses.lock().expect("replay lock poisoned");
        let queue = map
            .get_mut(&digest)
            .ok_or(BackendError::NotRecorded { digest })?;
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty"))
        } else {
            Ok(queue.front().cloned().expect("entries are never empty"))
        }
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// Wraps a backend and records every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    transcript: Mutex<Transcript>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            transcript: Mutex::new(Transcript::new()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("recorder lock poisoned").clone()
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let response = self.inner.complete(request)?;
        self.transcript
            .lock()
            .expect("recorder lock poisoned")
            .push(request, None, response.clone());
        Ok(response)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// Answers requests from a fixed queue, in arrival order, and keeps every
/// request it saw. Once the queue is empty it fails.
#[derive(Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<Result<String, BackendError>>>,
    seen: Mutex<Vec<LlmRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            queue: Mutex::new(responses.into_iter().map(|s| Ok(s.into())).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, response: Result<String, BackendError>) {
        self.queue.lock().expect("script lock poisoned").push_back(response);
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.seen.lock().expect("script lock poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script lock poisoned").len()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        self.seen.lock().expect("script lock poisoned").push(request.clone());
        self.queue
            .lock()
            .expect("script lock poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Transport("script exhausted".into())))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_matches_by_digest_and_repeats_last() {
        let a = LlmRequest::new("sys", "a");
        let b = LlmRequest::new("sys", "b");
        let mut t = Transcript::new();
        t.push(&a, Some("first a"), "A1");
        t.push(&b, None, "B");
        t.push(&a, None, "A2");
        let replay = ReplayBackend::new(t);
        assert_eq!(replay.complete(&b).unwrap(), "B");
        assert_eq!(replay.complete(&a).unwrap(), "A1");
        assert_eq!(replay.complete(&a).unwrap(), "A2");
        assert_eq!(replay.complete(&a).unwrap(), "A2");
        let miss = replay.complete(&LlmRequest::new("sys", "c"));
        assert!(matches!(miss, Err(BackendError::NotRecorded { .. })));
    }

    #[test]
    fn digest_separates_system_and_user() {
        assert_ne!(
            LlmRequest::new("ab", "c").digest(),
            LlmRequest::new("a", "bc").digest()
        );
    }

    #[test]
    fn recorder_output_replays() {
        let scripted = ScriptedBackend::new(["one", "two"]);
        let rec = RecordingBackend::new(&scripted);
        let r1 = LlmRequest::new("s", "1");
        let r2 = LlmRequest::new("s", "2");
        rec.complete(&r1).unwrap();
        rec.complete(&r2).unwrap();
        let transcript = rec.transcript();
        let json = transcript.to_json();
        let back: Transcript = serde_json::from_str(&json).unwrap();
        let replay = ReplayBackend::new(back);
        assert_eq!(replay.complete(&r2).unwrap(), "two");
        assert_eq!(replay.complete(&r1).unwrap(), "one");
    }

    #[test]
    fn scripted_fails_when_exhausted() {
        let s = ScriptedBackend::new(["x"]);
        let r = LlmRequest::new("s", "u");
        assert_eq!(s.complete(&r).unwrap(), "x");
        assert!(s.complete(&r).is_err());
        assert_eq!(s.requests().len(), 2);
    }
}
