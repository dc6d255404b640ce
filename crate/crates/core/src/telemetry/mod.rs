//! Telemetry domain model: spans, logs, metrics, alerts and deployment topology.
//!
//! Records are loaded once through a [`Loader`] into an immutable
//! [`TelemetryStore`], which owns the lookup indexes every other module reads
//! through (span-by-id, children-by-parent, logs and metrics by component and
//! time).

mod ingest;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{export, ingest, CsvLoader, Loader, SourceFormat, SourcePaths};
pub use store::{IngestReport, Slice, TelemetryStore};

/// Milliseconds since the Unix epoch, UTC.
pub type Millis = i64;

/// Default alert window width.
pub const DEFAULT_WINDOW_MS: Millis = 60_000;

/// One operation's execution record within a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    /// Pod-level component identifier.
    pub cmdb_id: String,
    pub service: String,
    pub operation: String,
    pub start_time: Millis,
    pub duration: u64,
    /// 0 is success; any other value is treated as an error.
    pub status_code: i32,
}

impl Span {
    pub fn is_error(&self) -> bool {
        self.status_code != 0
    }

    pub fn is_root(&self) -> bool {
        self.parent_span_id.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogLevel {
    Debug,
    Info,
    Warn,
    Error,
    Fatal,
}

impl LogLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            LogLevel::Debug => "DEBUG",
            LogLevel::Info => "INFO",
            LogLevel::Warn => "WARN",
            LogLevel::Error => "ERROR",
            LogLevel::Fatal => "FATAL",
        }
    }
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DEBUG" => Ok(LogLevel::Debug),
            "INFO" => Ok(LogLevel::Info),
            "WARN" | "WARNING" => Ok(LogLevel::Warn),
            "ERROR" => Ok(LogLevel::Error),
            "FATAL" => Ok(LogLevel::Fatal),
            other => Err(format!("unknown log level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp: Millis,
    pub component: String,
    pub level: LogLevel,
    /// Template id or category label.
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub timestamp: Millis,
    pub component: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub timestamp: Millis,
    pub trace_id: String,
    /// Root span of `trace_id`.
    pub entry_span_id: String,
    pub description: String,
    /// Set when the source row lacked a trace id and ingest bound it to the
    /// nearest root span in time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<String>,
}

/// A batch of alerts sharing one analysis window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertWindow {
    pub start: Millis,
    pub end: Millis,
    pub alerts: Vec<Alert>,
}

impl AlertWindow {
    pub fn new(start: Millis, end: Millis, mut alerts: Vec<Alert>) -> Result<Self, TelemetryError> {
        if start >= end {
            return Err(TelemetryError::InvalidWindow(format!("start {start} >= end {end}")));
        }
        if let Some(a) = alerts.iter().find(|a| a.timestamp < start || a.timestamp > end) {
            return Err(TelemetryError::InvalidWindow(format!(
                "alert `{}` at {} outside [{start}, {end}]",
                a.alert_id, a.timestamp
            )));
        }
        alerts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.alert_id.cmp(&b.alert_id)));
        Ok(Self { start, end, alerts })
    }

    /// Groups alerts into windows, starting a new window whenever the gap to
    /// the previous alert exceeds `window_ms`.
    pub fn detect(alerts: &[Alert], window_ms: Millis) -> Vec<AlertWindow> {
        let mut sorted: Vec<Alert> = alerts.to_vec();
        sorted.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.alert_id.cmp(&b.alert_id)));
        let mut windows: Vec<Vec<Alert>> = Vec::new();
        for alert in sorted {
            match windows.last_mut() {
                Some(current)
                    if alert.timestamp - current.last().map(|a| a.timestamp).unwrap_or(0) <= window_ms =>
                {
                    current.push(alert)
                }
                _ => windows.push(vec![alert]),
            }
        }
        windows
            .into_iter()
            .map(|alerts| {
                let first = alerts.first().map(|a| a.timestamp).unwrap_or(0);
                let last = alerts.last().map(|a| a.timestamp).unwrap_or(0);
                let end = (first + window_ms).max(last).max(first + 1);
                AlertWindow { start: first, end, alerts }
            })
            .collect()
    }
}

/// Granularity of a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Pod,
    Service,
    Node,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Pod => "pod",
            Level::Service => "service",
            Level::Node => "node",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pod" => Ok(Level::Pod),
            "service" => Ok(Level::Service),
            "node" => Ok(Level::Node),
            other => Err(format!("unknown level `{other}`")),
        }
    }
}

/// Pod residency: which service each pod belongs to and which host runs it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub pod_to_service: BTreeMap<String, String>,
    pub pod_to_node: BTreeMap<String, String>,
}

impl Topology {
    pub fn insert(&mut self, pod: impl Into<String>, service: impl Into<String>, node: impl Into<String>) {
        let pod = pod.into();
        self.pod_to_service.insert(pod.clone(), service.into());
        self.pod_to_node.insert(pod, node.into());
    }

    pub fn len(&self) -> usize {
        self.pod_to_service.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pod_to_service.is_empty()
    }

    pub fn service_of(&self, pod: &str) -> Option<&str> {
        self.pod_to_service.get(pod).map(String::as_str)
    }

    pub fn node_of(&self, pod: &str) -> Option<&str> {
        self.pod_to_node.get(pod).map(String::as_str)
    }

    pub fn pods_of_service<'a>(&'a self, service: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.pod_to_service
            .iter()
            .filter(move |(_, s)| s.as_str() == service)
            .map(|(p, _)| p.as_str())
    }

    pub fn pods_on_node<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.pod_to_node
            .iter()
            .filter(move |(_, n)| n.as_str() == node)
            .map(|(p, _)| p.as_str())
    }

    pub fn services(&self) -> BTreeSet<&str> {
        self.pod_to_service.values().map(String::as_str).collect()
    }

    pub fn nodes(&self) -> BTreeSet<&str> {
        self.pod_to_node.values().map(String::as_str).collect()
    }

    /// Classifies a component name. Pods take precedence over services, and
    /// services over nodes, when a name is reused across levels.
    pub fn level_of(&self, component: &str) -> Option<Level> {
        if self.pod_to_service.contains_key(component) {
            Some(Level::Pod)
        } else if self.pod_to_service.values().any(|s| s == component) {
            Some(Level::Service)
        } else if self.pod_to_node.values().any(|n| n == component) {
            Some(Level::Node)
        } else {
            None
        }
    }

    /// Vertical expansion: the component itself plus the entities whose
    /// telemetry is considered related to it.
    ///
    /// pod → {pod, its service, its node}; service → {service, all its pods};
    /// node → {node, resident pods}. Unknown names expand to themselves.
    pub fn related(&self, component: &str) -> Vec<String> {
        let mut out = vec![component.to_string()];
        match self.level_of(component) {
            Some(Level::Pod) => {
                if let Some(s) = self.service_of(component) {
                    out.push(s.to_string());
                }
                if let Some(n) = self.node_of(component) {
                    out.push(n.to_string());
                }
            }
            Some(Level::Service) => out.extend(self.pods_of_service(component).map(str::to_string)),
            Some(Level::Node) => out.extend(self.pods_on_node(component).map(str::to_string)),
            None => {}
        }
        let mut seen = BTreeSet::new();
        out.retain(|c| seen.insert(c.clone()));
        out
    }
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("{file}:{line}: field `{field}`: {reason}")]
    Malformed {
        file: String,
        line: u64,
        field: String,
        reason: String,
    },
    #[error("dangling parent_span_id on spans: {}", .span_ids.join(", "))]
    DanglingParent { span_ids: Vec<String> },
    #[error("no topology entry for cmdb_id `{0}`")]
    MissingTopology(String),
    #[error("duplicate span_id `{0}`")]
    DuplicateSpan(String),
    #[error("trace `{trace_id}` is not a rooted tree: {reason}")]
    InvalidTrace { trace_id: String, reason: String },
    #[error("span `{0}` not found")]
    SpanNotFound(String),
    #[error("trace `{0}` not found")]
    TraceNotFound(String),
    #[error("alert `{alert_id}`: {reason}")]
    InvalidAlert { alert_id: String, reason: String },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", .path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Plain record collections, before validation and indexing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TelemetryRecords {
    pub spans: Vec<Span>,
    pub logs: Vec<LogEntry>,
    pub metrics: Vec<MetricSample>,
    pub alerts: Vec<Alert>,
    pub topology: Topology,
}
