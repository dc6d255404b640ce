//! Reasoning transcripts: the ordered steps of one alert's analysis.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{ChildCall, MetricAnomaly};
use crate::graph::NodeKey;
use crate::telemetry::{LogEntry, Millis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Suspicious, not (yet) confirmed.
    Suspect,
    ConfirmedRootCause,
    /// Not suspicious, nothing to follow.
    Cleared,
    /// Not suspicious itself, but suspicious children were followed.
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Reflection,
}

/// One visit of one span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub stage: Stage,
    pub node: NodeKey,
    pub span: String,
    pub pod: String,
    /// Service name recorded on the span.
    pub service: String,
    /// Service owning the pod, from topology.
    pub pod_service: Option<String>,
    /// Host node of the pod, from topology.
    pub host: Option<String>,
    pub operation: String,
    pub start_time: Millis,
    pub duration: u64,
    pub status: i32,
    /// Recursion depth relative to the stage's entry span.
    pub depth: usize,
    pub instruction: String,
    pub trace_evidence: Vec<ChildCall>,
    /// `None` when the log agent was not consulted.
    pub log_evidence: Option<Vec<LogEntry>>,
    /// `None` when the metric agent was not consulted.
    pub metric_evidence: Option<Vec<MetricAnomaly>>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Set when remapping onto a graph that lacks this step's node.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stale: bool,
}

impl Step {
    /// SHA-256 over the serialized evidence, lowercase hex.
    pub fn evidence_digest(&self) -> String {
        let body = serde_json::to_vec(&(&self.trace_evidence, &self.log_evidence, &self.metric_evidence))
            .expect("evidence serializes");
        hex::encode(Sha256::digest(body))
    }

    pub fn is_confirmed(&self) -> bool {
        self.verdict == Verdict::ConfirmedRootCause && !self.stale
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub alert_id: String,
    pub steps: Vec<Step>,
    /// Number of leading `Initial` steps.
    pub initial_len: usize,
    #[serde(default)]
    pub truncated: bool,
}

impl Transcript {
    pub fn new(alert_id: impl Into<String>) -> Self {
        Self {
            alert_id: alert_id.into(),
            ..Default::default()
        }
    }

    /// Concatenates an initial-stage and a reflection-stage transcript,
    /// renumbering steps in execution order.
    pub fn join(initial: Transcript, reflection: Transcript) -> Self {
        let initial_len = initial.steps.len();
        let truncated = initial.truncated || reflection.truncated;
        let mut steps = initial.steps;
        steps.extend(reflection.steps);
        let mut t = Self {
            alert_id: initial.alert_id,
            steps,
            initial_len,
            truncated,
        };
        t.renumber();
        t
    }

    pub fn renumber(&mut self) {
        for (i, s) in self.steps.iter_mut().enumerate() {
            s.index = i;
        }
    }

    pub fn initial(&self) -> &[Step] {
        &self.steps[..self.initial_len.min(self.steps.len())]
    }

    pub fn reflection(&self) -> &[Step] {
        &self.steps[self.initial_len.min(self.steps.len())..]
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Suspect => "suspect",
            Verdict::ConfirmedRootCause => "confirmed",
            Verdict::Cleared => "cleared",
            Verdict::Expanded => "expanded",
        }
    }
}

/// Human-readable, one block per step.
impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alert {}: {} steps ({} initial){}", self.alert_id, self.len(), self.initial_len,
            if self.truncated { ", truncated" } else { "" })?;
        for s in &self.steps {
            let stage = match s.stage {
                Stage::Initial => "initial",
                Stage::Reflection => "reflect",
            };
            writeln!(
                f,
                "{:>4} {stage} {}{} [{}] {} {}ms status={}{}",
                s.index,
                "  ".repeat(s.depth),
                s.span,
                s.node,
                s.verdict.as_str(),
                s.duration,
                s.status,
                if s.stale { " (stale)" } else { "" }
            )?;
            if !s.instruction.is_empty() {
                writeln!(f, "       {}  > {}", "  ".repeat(s.depth), s.instruction)?;
            }
            let logs = s.log_evidence.as_ref().map_or(0, Vec::len);
            let metrics = s.metric_evidence.as_ref().map_or(0, Vec::len);
            if s.log_evidence.is_some() || s.metric_evidence.is_some() {
                writeln!(f, "       {}  evidence: {logs} logs, {metrics} metric anomalies", "  ".repeat(s.depth))?;
            }
            if let Some(e) = &s.error {
                writeln!(f, "       {}  error: {e}", "  ".repeat(s.depth))?;
            }
        }
        Ok(())
    }
}
