//! Chat-completion and embedding client for OpenAI-compatible endpoints.
//!
//! In [`LlmMode::Mock`] nothing leaves the process: `chat` answers with a
//! registered responder or the caller-supplied offline answer, and the
//! transport is never touched.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Live,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub base_url: String,
    pub model_id: String,
    pub embedding_model_id: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    pub mode: LlmMode,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: "https://api.openai.com/v1".into(),
            model_id: "gpt-5".into(),
            embedding_model_id: "text-embedding-3-large".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 2,
            max_in_flight: 4,
            backoff_base_ms: 500,
            mode: LlmMode::Mock,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err("llm.timeout_secs must be > 0".into());
        }
        if self.max_in_flight == 0 {
            return Err("llm.max_in_flight must be >= 1".into());
        }
        if self.mode == LlmMode::Live && self.base_url.is_empty() {
            return Err("llm.base_url is required in live mode".into());
        }
        Ok(())
    }

    /// Delay before retry `i` (0-based): `base * 2^i`.
    pub fn backoff_delays(&self) -> Vec<Duration> {
        (0..self.max_retries)
            .map(|i| Duration::from_millis(self.backoff_base_ms.saturating_mul(1 << i.min(20))))
            .collect()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    HttpError(u16),
    #[error("environment variable {0} with the API key is not set")]
    MissingApiKey(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("embedding dimension changed from {expected} to {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("remote embeddings are unavailable in mock mode")]
    MockMode,
}

impl LlmError {
    pub fn retryable(&self) -> bool {
        !matches!(
            self,
            LlmError::MissingApiKey(_) | LlmError::DimensionDrift { .. } | LlmError::MockMode
        )
    }
}

/// Moves one JSON request to an endpoint and returns the JSON reply.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, LlmError>;
}

/// Blocking HTTP transport. The underlying client is built on first use.
#[derive(Default)]
pub struct HttpTransport {
    client: OnceLock<reqwest::blocking::Client>,
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, LlmError> {
        let client = self.client.get_or_init(reqwest::blocking::Client::new);
        let resp = client
            .post(url)
            .bearer_auth(api_key)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout
                } else {
                    LlmError::Transport(e.to_string())
                }
            })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(LlmError::HttpError(status.as_u16()));
        }
        resp.json::<Value>()
            .map_err(|e| LlmError::BadResponse(e.to_string()))
    }
}

/// Test transport: records every request, replays scripted replies and
/// tracks the peak number of concurrent calls.
#[derive(Default)]
pub struct RecordingTransport {
    pub requests: Mutex<Vec<(String, Value)>>,
    replies: Mutex<VecDeque<Result<Value, LlmError>>>,
    fallback: Mutex<Option<Result<Value, LlmError>>>,
    delay: Duration,
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl RecordingTransport {
    pub fn new() -> RecordingTransport {
        RecordingTransport::default()
    }

    pub fn with_delay(delay: Duration) -> RecordingTransport {
        RecordingTransport {
            delay,
            ..RecordingTransport::default()
        }
    }

    /// Queue a reply for the next call.
    pub fn push_reply(&self, reply: Result<Value, LlmError>) {
        self.replies.lock().unwrap().push_back(reply);
    }

    /// Reply used once the queue is empty.
    pub fn set_fallback(&self, reply: Result<Value, LlmError>) {
        *self.fallback.lock().unwrap() = Some(reply);
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Transport for RecordingTransport {
    fn post_json(
        &self,
        url: &str,
        _api_key: &str,
        body: &Value,
        _timeout: Duration,
    ) -> Result<Value, LlmError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.requests
            .lock()
            .unwrap()
            .push((url.to_string(), body.clone()));
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let reply = self.replies.lock().unwrap().pop_front();
        self.current.fetch_sub(1, Ordering::SeqCst);
        match reply {
            Some(r) => r,
            None => self
                .fallback
                .lock()
                .unwrap()
                .clone()
                .unwrap_or(Err(LlmError::HttpError(503))),
        }
    }
}

/// Canned chat-completion reply carrying `content`.
pub fn chat_reply(content: &str) -> Value {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})
}

pub type Responder = Arc<dyn Fn(&str) -> String + Send + Sync>;

struct Gate {
    limit: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) -> GatePass<'_> {
        let mut busy = self.busy.lock().unwrap();
        while *busy >= self.limit {
            busy = self.freed.wait(busy).unwrap();
        }
        *busy += 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable client. Bounds in-flight requests; otherwise stateless apart
/// from the recorded embedding dimension.
pub struct LlmClient {
    cfg: LlmConfig,
    transport: Arc<dyn Transport>,
    responder: Option<Responder>,
    gate: Gate,
    embed_dim: Mutex<Option<usize>>,
    sleep: bool,
}

impl LlmClient {
    pub fn new(cfg: LlmConfig) -> LlmClient {
        LlmClient::with_transport(cfg, Arc::new(HttpTransport::default()))
    }

    pub fn with_transport(cfg: LlmConfig, transport: Arc<dyn Transport>) -> LlmClient {
        let limit = cfg.max_in_flight.max(1);
        LlmClient {
            cfg,
            transport,
            responder: None,
            gate: Gate {
                limit,
                busy: Mutex::new(0),
                freed: Condvar::new(),
            },
            embed_dim: Mutex::new(None),
            sleep: true,
        }
    }

    /// Offline client.
    pub fn mock() -> LlmClient {
        LlmClient::new(LlmConfig {
            mode: LlmMode::Mock,
            ..LlmConfig::default()
        })
    }

    /// Mock responder that overrides the caller's offline answer.
    pub fn with_responder(mut self, responder: Responder) -> LlmClient {
        self.responder = Some(responder);
        self
    }

    /// Skip real sleeping between retries (delays are still computed).
    pub fn without_backoff_sleep(mut self) -> LlmClient {
        self.sleep = false;
        self
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    pub fn is_mock(&self) -> bool {
        self.cfg.mode == LlmMode::Mock
    }

    fn api_key(&self) -> Result<String, LlmError> {
        std::env::var(&self.cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::MissingApiKey(self.cfg.api_key_env.clone()))
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post_with_retries(&self, url: &str, body: &Value) -> Result<Value, LlmError> {
        let key = self.api_key()?;
        let timeout = Duration::from_secs_f64(self.cfg.timeout_secs);
        let delays = self.cfg.backoff_delays();
        let mut attempt = 0;
        loop {
            let result = {
                let _pass = self.gate.acquire();
                self.transport.post_json(url, &key, body, timeout)
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt < delays.len() => {
                    log::warn!("request to {url} failed ({e}); retry {}", attempt + 1);
                    if self.sleep {
                        std::thread::sleep(delays[attempt]);
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Request body for a chat completion.
    pub fn chat_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
    }

    /// Send `prompt` and return the first message content. In mock mode the
    /// registered responder answers, or `offline` if none is registered.
    pub fn chat(&self, prompt: &str, offline: &dyn Fn() -> String) -> Result<String, LlmError> {
        if self.is_mock() {
            return Ok(match &self.responder {
                Some(r) => r(prompt),
                None => offline(),
            });
        }
        let reply =
            self.post_with_retries(&self.url("chat/completions"), &self.chat_body(prompt))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse("no choices[0].message.content".into()))
    }

    /// Remote embedding of `text`. The first dimension seen is recorded and
    /// enforced afterwards.
    pub fn embed_remote(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        if self.is_mock() {
            return Err(LlmError::MockMode);
        }
        let body = json!({"model": self.cfg.embedding_model_id, "input": text});
        let reply = self.post_with_retries(&self.url("embeddings"), &body)?;
        let vector: Vec<f64> = reply["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| LlmError::BadResponse("no data[0].embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| LlmError::BadResponse("non-numeric embedding".into()))
            })
            .collect::<Result<_, _>>()?;
        self.check_dimension(vector.len())?;
        Ok(vector)
    }

    /// Record `dim` on first use; error if it differs from the recorded one.
    pub fn check_dimension(&self, dim: usize) -> Result<(), LlmError> {
        let mut seen = self.embed_dim.lock().unwrap();
        match *seen {
            Some(expected) if expected != dim => {
                Err(LlmError::DimensionDrift { expected, got: dim })
            }
            Some(_) => Ok(()),
            None => {
                *seen = Some(dim);
                Ok(())
            }
        }
    }
}
