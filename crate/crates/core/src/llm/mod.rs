//! A [`Policy`] backed by a chat-completion model.
//!
//! Each predicate renders its own prompt (instruction, evidence, output
//! schema) from the arguments it was given, sends one request and parses a
//! `{"decision": ..., "rationale": ...}` object. A malformed answer gets one
//! repair round; after that, or after a transport failure that outlived its
//! retries, the call falls back to the deterministic policy's answer and a
//! fallback event is recorded. Rejected credentials are a hard error.

mod transport;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{ChildCall, MetricAnomaly};
use crate::reasoner::{DeterministicPolicy, InstructionContext, Policy, PolicyError, SpanView};
use crate::telemetry::LogEntry;

pub use transport::{
    first_message, ChatRequest, Exchange, HttpTransport, Message, Mock, Recording, Replay, SessionLog, Transport,
    TransportError,
};

pub const SYSTEM_PROMPT: &str = include_str!("../../prompts/system.txt");
pub const INSTRUCTION_PROMPT: &str = include_str!("../../prompts/instruction.txt");
pub const SUSPECT_PROMPT: &str = include_str!("../../prompts/suspect.txt");
pub const CONFIRM_PROMPT: &str = include_str!("../../prompts/confirm.txt");
pub const CHILDREN_PROMPT: &str = include_str!("../../prompts/children.txt");
pub const REPAIR_PROMPT: &str = include_str!("../../prompts/repair.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// Concurrent requests allowed.
    pub max_in_flight: usize,
    /// Append every exchange here.
    pub session_log: Option<PathBuf>,
    /// Answer from this session log instead of the endpoint.
    pub replay: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "LLM_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 2,
            temperature: 0.0,
            max_in_flight: 4,
            session_log: None,
            replay: None,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs > 0.0) {
            return Err(format!("llm.timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if !(self.temperature >= 0.0) {
            return Err(format!("llm.temperature must be non-negative, got {}", self.temperature));
        }
        if self.max_in_flight == 0 {
            return Err("llm.max_in_flight must be at least 1".into());
        }
        Ok(())
    }
}

/// A predicate call answered by the deterministic rules instead of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub predicate: String,
    pub span_id: String,
    pub reason: String,
}

/// Counting semaphore bounding requests in flight.
struct Gate {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn run<R>(&self, f: impl FnOnce() -> R) -> R {
        {
            let mut used = self.used.lock().expect("gate lock");
            while *used >= self.cap {
                used = self.freed.wait(used).expect("gate lock");
            }
            *used += 1;
        }
        let out = f();
        *self.used.lock().expect("gate lock") -= 1;
        self.freed.notify_one();
        out
    }
}

pub struct LlmPolicy<T> {
    config: LlmConfig,
    transport: T,
    fallback: DeterministicPolicy,
    events: Mutex<Vec<FallbackEvent>>,
    gate: Gate,
}

impl LlmPolicy<Box<dyn Transport>> {
    /// Builds the transport `config` asks for: replay from a session log, or
    /// the HTTP endpoint with the key read from `api_key_env`, optionally
    /// recording into `session_log`.
    pub fn from_config(config: LlmConfig) -> Result<Self, PolicyError> {
        config.validate().map_err(PolicyError::Config)?;
        let transport: Box<dyn Transport> = if let Some(path) = &config.replay {
            Box::new(Replay::load(path).map_err(|e| PolicyError::Config(e.to_string()))?)
        } else {
            let key = std::env::var(&config.api_key_env).map_err(|_| {
                PolicyError::Config(format!("environment variable {} is not set", config.api_key_env))
            })?;
            let http = HttpTransport::new(&config.endpoint, Some(key), Duration::from_secs_f64(config.timeout_secs))
                .map_err(|e| PolicyError::Config(e.to_string()))?;
            match &config.session_log {
                Some(path) => Box::new(Recording::new(
                    http,
                    SessionLog::append_to(path).map_err(|e| PolicyError::Config(e.to_string()))?,
                )),
                None => Box::new(http),
            }
        };
        Ok(Self::new(config, transport))
    }
}

/// What a predicate expects in `decision`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Text,
    Bool,
    Ids,
}

impl Expect {
    fn schema(self) -> &'static str {
        match self {
            Expect::Text => r#"{"decision": "<text>", "rationale": "<text>"}"#,
            Expect::Bool => r#"{"decision": true | false, "rationale": "<text>"}"#,
            Expect::Ids => r#"{"decision": ["<child span id>", ...], "rationale": "<text>"}"#,
        }
    }
}

/// Pulls the verdict object out of a reply and checks the decision's type.
fn parse_verdict(reply: &str, expect: Expect) -> Result<Value, String> {
    let trimmed = reply.trim();
    let candidate = match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(a), Some(b)) if a < b => &trimmed[a..=b],
        _ => return Err("no JSON object in reply".into()),
    };
    let value: Value = serde_json::from_str(candidate).map_err(|e| format!("invalid JSON: {e}"))?;
    let decision = value.get("decision").ok_or("missing `decision`")?.clone();
    let ok = match expect {
        Expect::Text => decision.is_string(),
        Expect::Bool => decision.is_boolean(),
        Expect::Ids => decision.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
    };
    if ok {
        Ok(decision)
    } else {
        Err(format!("`decision` has the wrong type: {decision}"))
    }
}

fn render(template: &str, fields: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in fields {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

fn span_text(s: &SpanView) -> String {
    let siblings = s.sibling_durations.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
    format!(
        "span {} on pod {} (service {}), operation {}, start {} ms, duration {} ms, status {}\nsibling durations ms: [{}]",
        s.span_id, s.pod, s.service, s.operation, s.start_time, s.duration, s.status, siblings
    )
}

fn trace_text(trace: &[ChildCall]) -> String {
    if trace.is_empty() {
        return "(none)".into();
    }
    let mut s = String::new();
    for c in trace {
        let _ = writeln!(s, "{} {} {} {} {} {} {}", c.t, c.child_span, c.pod, c.svc, c.op, c.d, c.sigma);
    }
    s.trim_end().to_string()
}

fn logs_text(logs: &[LogEntry]) -> String {
    if logs.is_empty() {
        return "(none)".into();
    }
    let mut s = String::new();
    for l in logs {
        let _ = writeln!(s, "{} {} {} {} {}", l.timestamp, l.component, l.level, l.kind, l.message);
    }
    s.trim_end().to_string()
}

fn metrics_text(metrics: &[MetricAnomaly]) -> String {
    if metrics.is_empty() {
        return "(none)".into();
    }
    let mut s = String::new();
    for m in metrics {
        let _ = writeln!(s, "{} {} {:.2} {}", m.component, m.metric, m.max_deviation, m.onset);
    }
    s.trim_end().to_string()
}

impl<T: Transport> LlmPolicy<T> {
    pub fn new(config: LlmConfig, transport: T) -> Self {
        let gate = Gate::new(config.max_in_flight);
        Self {
            config,
            transport,
            fallback: DeterministicPolicy::default(),
            events: Mutex::new(Vec::new()),
            gate,
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn fallback_events(&self) -> Vec<FallbackEvent> {
        self.events.lock().expect("events lock").clone()
    }

    pub fn fallbacks(&self) -> usize {
        self.events.lock().expect("events lock").len()
    }

    fn request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            temperature: self.config.temperature,
            messages,
        }
    }

    /// One request with retries on transient failures.
    fn send(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let mut attempt = 0;
        loop {
            match self.gate.run(|| self.transport.send(req)) {
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    attempt += 1;
                    thread::sleep(Duration::from_millis(250 * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }

    /// Asks, repairs once, and reports `Ok(None)` when the caller should fall
    /// back. Only authentication failures are errors.
    fn ask(&self, predicate: &str, span_id: &str, prompt: String, expect: Expect) -> Result<Option<Value>, PolicyError> {
        let mut messages = vec![Message::new("system", SYSTEM_PROMPT.trim()), Message::new("user", prompt)];
        let mut reason = String::new();
        for round in 0..2 {
            let reply = match self.send(&self.request(messages.clone())) {
                Ok(r) => r,
                Err(TransportError::Auth(m)) => return Err(PolicyError::Config(format!("model endpoint rejected credentials: {m}"))),
                Err(e) => {
                    reason = e.to_string();
                    break;
                }
            };
            match parse_verdict(&reply, expect) {
                Ok(v) => return Ok(Some(v)),
                Err(problem) if round == 0 => {
                    messages.push(Message::new("assistant", reply));
                    messages.push(Message::new(
                        "user",
                        render(REPAIR_PROMPT, &[("problem", problem.clone()), ("schema", expect.schema().to_string())]),
                    ));
                    reason = problem;
                }
                Err(problem) => reason = format!("after repair: {problem}"),
            }
        }
        self.events.lock().expect("events lock").push(FallbackEvent {
            predicate: predicate.to_string(),
            span_id: span_id.to_string(),
            reason,
        });
        Ok(None)
    }
}

impl<T: Transport> Policy for LlmPolicy<T> {
    fn name(&self) -> &str {
        "llm"
    }

    fn generate_instruction(&self, span: &SpanView, ctx: &InstructionContext) -> Result<String, PolicyError> {
        let prompt = render(
            INSTRUCTION_PROMPT,
            &[
                ("stage", format!("{:?}", ctx.stage).to_lowercase()),
                ("depth", ctx.depth.to_string()),
                ("parent", ctx.parent.clone().unwrap_or_else(|| "(none)".into())),
                ("span", span_text(span)),
            ],
        );
        match self.ask("instruction", &span.span_id, prompt, Expect::Text)? {
            Some(Value::String(s)) => Ok(s),
            _ => self.fallback.generate_instruction(span, ctx),
        }
    }

    fn suspect(&self, span: &SpanView, trace: &[ChildCall]) -> Result<bool, PolicyError> {
        let prompt = render(SUSPECT_PROMPT, &[("span", span_text(span)), ("trace", trace_text(trace))]);
        match self.ask("suspect", &span.span_id, prompt, Expect::Bool)? {
            Some(Value::Bool(b)) => Ok(b),
            _ => self.fallback.suspect(span, trace),
        }
    }

    fn confirm(&self, span: &SpanView, logs: &[LogEntry], metrics: &[MetricAnomaly]) -> Result<bool, PolicyError> {
        let prompt = render(
            CONFIRM_PROMPT,
            &[("span", span_text(span)), ("logs", logs_text(logs)), ("metrics", metrics_text(metrics))],
        );
        match self.ask("confirm", &span.span_id, prompt, Expect::Bool)? {
            Some(Value::Bool(b)) => Ok(b),
            _ => self.fallback.confirm(span, logs, metrics),
        }
    }

    fn suspicious_children(&self, span: &SpanView, trace: &[ChildCall]) -> Result<Vec<ChildCall>, PolicyError> {
        let prompt = render(CHILDREN_PROMPT, &[("span", span_text(span)), ("trace", trace_text(trace))]);
        match self.ask("children", &span.span_id, prompt, Expect::Ids)? {
            Some(Value::Array(ids)) => Ok(ids
                .iter()
                .filter_map(Value::as_str)
                .filter_map(|id| trace.iter().find(|c| c.child_span == id).cloned())
                .collect()),
            _ => self.fallback.suspicious_children(span, trace),
        }
    }
}
