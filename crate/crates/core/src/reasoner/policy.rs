use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{ChildCall, MetricAnomaly};
use crate::telemetry::{LogEntry, LogLevel, Millis, TelemetryError, TelemetryStore};
use crate::transcript::Stage;

/// What a policy may know about a span: its own record and the durations of
/// its siblings. Nothing else from the store reaches a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanView {
    pub span_id: String,
    pub pod: String,
    pub service: String,
    pub operation: String,
    pub start_time: Millis,
    pub duration: u64,
    pub status: i32,
    /// Durations of the other children of this span's parent.
    pub sibling_durations: Vec<u64>,
}

impl SpanView {
    pub fn from_store(store: &TelemetryStore, span_id: &str) -> Result<Self, TelemetryError> {
        let span = store.span(span_id)?;
        let sibling_durations = match &span.parent_span_id {
            Some(p) => store
                .children_of(p)?
                .into_iter()
                .filter(|s| s.span_id != span.span_id)
                .map(|s| s.duration)
                .collect(),
            None => Vec::new(),
        };
        Ok(Self {
            span_id: span.span_id.clone(),
            pod: span.cmdb_id.clone(),
            service: span.service.clone(),
            operation: span.operation.clone(),
            start_time: span.start_time,
            duration: span.duration,
            status: span.status_code,
            sibling_durations,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionContext {
    pub stage: Stage,
    pub depth: usize,
    pub parent: Option<String>,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    /// Misconfiguration that no retry or fallback can fix (e.g. rejected credentials).
    #[error("policy configuration error: {0}")]
    Config(String),
}

/// The judgments driving the recursive search.
///
/// Implementations see only their arguments; `suspicious_children` must return
/// a subset of `trace`.
pub trait Policy: Send + Sync {
    fn name(&self) -> &str;
    fn generate_instruction(&self, span: &SpanView, ctx: &InstructionContext) -> Result<String, PolicyError>;
    fn suspect(&self, span: &SpanView, trace: &[ChildCall]) -> Result<bool, PolicyError>;
    fn confirm(&self, span: &SpanView, logs: &[LogEntry], metrics: &[MetricAnomaly]) -> Result<bool, PolicyError>;
    fn suspicious_children(&self, span: &SpanView, trace: &[ChildCall]) -> Result<Vec<ChildCall>, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn generate_instruction(&self, span: &SpanView, ctx: &InstructionContext) -> Result<String, PolicyError> {
        (**self).generate_instruction(span, ctx)
    }
    fn suspect(&self, span: &SpanView, trace: &[ChildCall]) -> Result<bool, PolicyError> {
        (**self).suspect(span, trace)
    }
    fn confirm(&self, span: &SpanView, logs: &[LogEntry], metrics: &[MetricAnomaly]) -> Result<bool, PolicyError> {
        (**self).confirm(span, logs, metrics)
    }
    fn suspicious_children(&self, span: &SpanView, trace: &[ChildCall]) -> Result<Vec<ChildCall>, PolicyError> {
        (**self).suspicious_children(span, trace)
    }
}

pub fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid] as f64
    } else {
        (v[mid - 1] as f64 + v[mid] as f64) / 2.0
    })
}

/// Rule-based policy mirroring a manual trace walk.
///
/// * suspect: non-zero status, or duration above `timeout_factor` × the
///   median sibling duration;
/// * confirm: any metric anomaly, or an ERROR/FATAL log line;
/// * suspicious children: non-zero status or duration above
///   `timeout_factor` × the median child duration, slowest first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub timeout_factor: f64,
}

impl Default for DeterministicPolicy {
    fn default() -> Self {
        Self { timeout_factor: 3.0 }
    }
}

impl DeterministicPolicy {
    fn slow(&self, d: u64, reference: Option<f64>) -> bool {
        reference.is_some_and(|m| d as f64 > self.timeout_factor * m)
    }
}

impl Policy for DeterministicPolicy {
    fn name(&self) -> &str {
        "deterministic"
    }

    fn generate_instruction(&self, span: &SpanView, ctx: &InstructionContext) -> Result<String, PolicyError> {
        let trigger = if span.status != 0 {
            format!("status {}", span.status)
        } else if self.slow(span.duration, median(&span.sibling_durations)) {
            format!("{} ms against sibling median", span.duration)
        } else {
            "routine check".to_string()
        };
        Ok(format!(
            "[{:?} d={}] inspect {} on {} ({}): {}",
            ctx.stage, ctx.depth, span.operation, span.pod, span.span_id, trigger
        ))
    }

    fn suspect(&self, span: &SpanView, _trace: &[ChildCall]) -> Result<bool, PolicyError> {
        Ok(span.status != 0 || self.slow(span.duration, median(&span.sibling_durations)))
    }

    fn confirm(&self, _span: &SpanView, logs: &[LogEntry], metrics: &[MetricAnomaly]) -> Result<bool, PolicyError> {
        Ok(!metrics.is_empty() || logs.iter().any(|l| matches!(l.level, LogLevel::Error | LogLevel::Fatal)))
    }

    fn suspicious_children(&self, _span: &SpanView, trace: &[ChildCall]) -> Result<Vec<ChildCall>, PolicyError> {
        let m = median(&trace.iter().map(|c| c.d).collect::<Vec<_>>());
        let mut out: Vec<ChildCall> = trace
            .iter()
            .filter(|c| c.sigma != 0 || self.slow(c.d, m))
            .cloned()
            .collect();
        out.sort_by(|a, b| b.d.cmp(&a.d).then_with(|| a.child_span.cmp(&b.child_span)));
        Ok(out)
    }
}

/// Adds a fixed delay to every call, standing in for a remote model.
#[derive(Debug, Clone)]
pub struct LatencyShim<P> {
    pub inner: P,
    pub delay: Duration,
}

impl<P> LatencyShim<P> {
    pub fn new(inner: P, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

impl<P: Policy> Policy for LatencyShim<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn generate_instruction(&self, span: &SpanView, ctx: &InstructionContext) -> Result<String, PolicyError> {
        thread::sleep(self.delay);
        self.inner.generate_instruction(span, ctx)
    }
    fn suspect(&self, span: &SpanView, trace: &[ChildCall]) -> Result<bool, PolicyError> {
        thread::sleep(self.delay);
        self.inner.suspect(span, trace)
    }
    fn confirm(&self, span: &SpanView, logs: &[LogEntry], metrics: &[MetricAnomaly]) -> Result<bool, PolicyError> {
        thread::sleep(self.delay);
        self.inner.confirm(span, logs, metrics)
    }
    fn suspicious_children(&self, span: &SpanView, trace: &[ChildCall]) -> Result<Vec<ChildCall>, PolicyError> {
        thread::sleep(self.delay);
        self.inner.suspicious_children(span, trace)
    }
}
