//! Evidence-gathering agents and the consolidator.
//!
//! The trace agent returns a span's direct calls, the log agent the relevant
//! log lines around a timestamp, and the metric agent the series that fail an
//! n-sigma test against their recent history. The consolidator turns confirmed
//! reasoning steps into a ranked candidate list.

mod consolidate;
mod log;
mod metric;

use serde::{Deserialize, Serialize};

use crate::telemetry::{Millis, Span, TelemetryError, TelemetryStore};

pub use consolidate::{consolidate, Candidate, ConsolidatorWeights, RankedRootCauses};
pub use log::{log_agent, LogRelevance};
pub use metric::{metric_agent, n_sigma_check, MetricAnomaly, MetricScan, SkippedMetric, BASELINE_MS};

/// A direct call made by a span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildCall {
    pub t: Millis,
    pub child_span: String,
    pub pod: String,
    pub svc: String,
    pub op: String,
    pub d: u64,
    pub sigma: i32,
}

impl From<&Span> for ChildCall {
    fn from(s: &Span) -> Self {
        Self {
            t: s.start_time,
            child_span: s.span_id.clone(),
            pod: s.cmdb_id.clone(),
            svc: s.service.clone(),
            op: s.operation.clone(),
            d: s.duration,
            sigma: s.status_code,
        }
    }
}

/// Direct children of `span_id` with their metadata, in start-time order.
pub fn trace_agent(store: &TelemetryStore, span_id: &str) -> Result<Vec<ChildCall>, TelemetryError> {
    Ok(store.children_of(span_id)?.into_iter().map(ChildCall::from).collect())
}
