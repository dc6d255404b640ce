//! Chat transports: live HTTP, session recording, replay and in-process mocks.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
}

impl ChatRequest {
    /// SHA-256 of the request's JSON form, hex encoded. Identical requests
    /// always share a digest.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("response has no message body: {0}")]
    Malformed(String),
    #[error("no recorded response for request digest {0}")]
    UnknownDigest(String),
    #[error("session log {path}: {reason}")]
    Log { path: String, reason: String },
}

impl TransportError {
    /// Worth another attempt.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Timeout | Self::Network(_) => true,
            Self::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Sends one chat request and returns the text of the first message.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).send(request)
    }
}

/// Chat-completion endpoint over HTTPS with bearer authentication.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.to_string(),
            api_key,
        })
    }
}

/// Text of the first message in a chat-completion response. Accepts the
/// `choices[0].message.content` and `content[0].text` layouts.
pub fn first_message(body: &Value) -> Option<String> {
    body.pointer("/choices/0/message/content")
        .or_else(|| body.pointer("/content/0/text"))
        .and_then(Value::as_str)
        .map(String::from)
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": request.messages,
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| TransportError::Network(e.to_string()))?;
        match status {
            401 | 403 => return Err(TransportError::Auth(format!("HTTP {status}"))),
            s if !(200..300).contains(&s) => return Err(TransportError::Http { status: s, body: text }),
            _ => {}
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| TransportError::Malformed(e.to_string()))?;
        first_message(&value).ok_or_else(|| TransportError::Malformed(text.chars().take(200).collect()))
    }
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub digest: String,
    pub request: ChatRequest,
    pub response: Result<String, String>,
    pub latency_ms: f64,
}

/// Appends every exchange to a JSONL file; appends are serialized.
pub struct SessionLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl SessionLog {
    pub fn append_to(path: &Path) -> Result<Self, TransportError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| TransportError::Log {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self, exchange: &Exchange) -> Result<(), TransportError> {
        let mut line = serde_json::to_string(exchange).expect("exchange serializes");
        line.push('\n');
        let mut f = self.file.lock().expect("session log lock");
        f.write_all(line.as_bytes()).map_err(|e| TransportError::Log {
            path: self.path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Passes requests to `inner` and logs each exchange.
pub struct Recording<T> {
    pub inner: T,
    log: SessionLog,
}

impl<T> Recording<T> {
    pub fn new(inner: T, log: SessionLog) -> Self {
        Self { inner, log }
    }
}

impl<T: Transport> Transport for Recording<T> {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let started = Instant::now();
        let result = self.inner.send(request);
        let exchange = Exchange {
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            digest: request.digest(),
            request: request.clone(),
            response: result.as_ref().map(Clone::clone).map_err(ToString::to_string),
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.log.write(&exchange)?;
        result
    }
}

/// Answers from a session log by request digest; never touches the network.
#[derive(Debug, Default)]
pub struct Replay {
    responses: HashMap<String, String>,
    served: AtomicUsize,
}

impl Replay {
    /// Loads successful exchanges; for a digest seen twice the first wins.
    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let bad = |reason: String| TransportError::Log {
            path: path.display().to_string(),
            reason,
        };
        let file = File::open(path).map_err(|e| bad(e.to_string()))?;
        let mut responses = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Exchange = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            if let Ok(text) = ex.response {
                responses.entry(ex.digest).or_insert(text);
            }
        }
        Ok(Self {
            responses,
            served: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn served(&self) -> usize {
        self.served.load(Ordering::Relaxed)
    }
}

impl Transport for Replay {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let digest = request.digest();
        let text = self
            .responses
            .get(&digest)
            .cloned()
            .ok_or(TransportError::UnknownDigest(digest))?;
        self.served.fetch_add(1, Ordering::Relaxed);
        Ok(text)
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync;

/// In-process stand-in for a model endpoint.
pub struct Mock {
    respond: Box<Responder>,
    calls: AtomicUsize,
}

impl Mock {
    pub fn new(respond: impl Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync + 'static) -> Self {
        Self {
            respond: Box::new(respond),
            calls: AtomicUsize::new(0),
        }
    }

    /// Always answers `text`.
    pub fn fixed(text: &str) -> Self {
        let text = text.to_string();
        Self::new(move |_| Ok(text.clone()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Transport for Mock {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        (self.respond)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(content: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            messages: vec![Message::new("user", content)],
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.jsonl");
        let rec = Recording::new(Mock::new(|r| Ok(format!("echo {}", r.messages[0].content))), SessionLog::append_to(&path).unwrap());
        let live: Vec<String> = (0..5).map(|i| rec.send(&req(&i.to_string())).unwrap()).collect();

        let replay = Replay::load(&path).unwrap();
        let again: Vec<String> = (0..5).map(|i| replay.send(&req(&i.to_string())).unwrap()).collect();
        assert_eq!(live, again);
        assert_eq!(replay.served(), 5);

        let novel = req("novel");
        match replay.send(&novel) {
            Err(TransportError::UnknownDigest(d)) => assert_eq!(d, novel.digest()),
            other => panic!("expected unknown digest, got {other:?}"),
        }
    }

    #[test]
    fn response_layouts() {
        let a = json!({"choices": [{"message": {"role": "assistant", "content": "x"}}]});
        let b = json!({"content": [{"type": "text", "text": "y"}]});
        assert_eq!(first_message(&a).as_deref(), Some("x"));
        assert_eq!(first_message(&b).as_deref(), Some("y"));
        assert_eq!(first_message(&json!({})), None);
    }
}
