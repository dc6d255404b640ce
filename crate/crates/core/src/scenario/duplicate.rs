//! Near-duplicate alerts: copies of an existing alert's trace, either exact
//! (same structure and surrounding telemetry) or with one node's metrics
//! perturbed.

use std::collections::HashMap;

use super::{Scenario, ScenarioError};
use crate::agents::BASELINE_MS;
use crate::graph::MetricStat;
use crate::telemetry::{Alert, Millis, DEFAULT_WINDOW_MS};

/// Distance between replay regions. A multiple of the sampling period, and
/// longer than the baseline plus window any copy reads.
pub const REPLAY_SHIFT_MS: Millis = 25 * 60_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Jitter {
    /// How many copies, counted from the last, are perturbed. Each perturbed
    /// copy is moved to its own replay region and the target pod's metrics
    /// around it are shifted.
    pub jittered: usize,
    /// Shift in baseline standard deviations.
    pub magnitude: f64,
    /// Pod to perturb; picked automatically when `None`.
    pub target: Option<String>,
}

impl Jitter {
    pub fn exact() -> Self {
        Self {
            jittered: 0,
            magnitude: 0.0,
            target: None,
        }
    }

    /// Every copy perturbed.
    pub fn perturbed(magnitude: f64) -> Self {
        Self::perturb_last(usize::MAX, magnitude)
    }

    pub fn perturb_last(copies: usize, magnitude: f64) -> Self {
        Self {
            jittered: copies,
            magnitude,
            target: None,
        }
    }
}

/// Small, deterministic time offset of copy `i`, within ±300 ms.
fn offset(i: usize) -> i64 {
    ((i as i64 * 53) % 601) - 300
}

fn shift(t: Millis, by: i64) -> Millis {
    t + by
}

/// First non-root pod of the trace that appears on exactly one span and is
/// unrelated to the injected fault.
fn pick_target(s: &Scenario, trace_id: &str) -> Option<String> {
    let spans: Vec<_> = s.records.spans.iter().filter(|sp| sp.trace_id == trace_id).collect();
    let mut count: HashMap<&str, usize> = HashMap::new();
    for sp in &spans {
        *count.entry(sp.cmdb_id.as_str()).or_default() += 1;
    }
    let truth = s.truth.component.as_str();
    let topo = &s.records.topology;
    spans
        .iter()
        .filter(|sp| sp.parent_span_id.is_some() && count[sp.cmdb_id.as_str()] == 1)
        .map(|sp| sp.cmdb_id.as_str())
        .find(|p| *p != truth && topo.service_of(p) != Some(truth) && topo.node_of(p) != Some(truth))
        .map(String::from)
}

/// Adds `copies` copies of `alert_id` to the scenario.
///
/// Exact copies sit within ±300 ms of the original; their causal graphs
/// match the original's. The `j`-th perturbed copy is placed
/// `(j+1)·REPLAY_SHIFT_MS` later, with the surrounding metrics and logs replayed there, and the
/// target pod's samples within half a window of the copy shifted by
/// `magnitude` baseline standard deviations.
pub fn duplicate_alert(s: &Scenario, alert_id: &str, copies: usize, jitter: &Jitter) -> Result<Scenario, ScenarioError> {
    let alert = s
        .records
        .alerts
        .iter()
        .find(|a| a.alert_id == alert_id)
        .cloned()
        .ok_or_else(|| ScenarioError::Spec(format!("no alert `{alert_id}` to duplicate")))?;
    let target = if jitter.jittered > 0 && copies > 0 {
        let t = jitter
            .target
            .clone()
            .or_else(|| pick_target(s, &alert.trace_id))
            .ok_or_else(|| ScenarioError::Spec(format!("alert `{alert_id}` has no pod to perturb")))?;
        Some(t)
    } else {
        None
    };
    let w = DEFAULT_WINDOW_MS;
    let t0 = alert.timestamp;
    let trace: Vec<_> = s.records.spans.iter().filter(|sp| sp.trace_id == alert.trace_id).cloned().collect();

    let exact = copies.saturating_sub(jitter.jittered);
    let mut out = s.clone();
    for i in 0..copies {
        let suffix = format!("-c{i}");
        let perturbed = i >= exact;
        let region = if perturbed { (i - exact + 1) as i64 * REPLAY_SHIFT_MS } else { 0 };
        let by = region + offset(i);
        let trace_id = format!("{}{suffix}", alert.trace_id);
        for sp in &trace {
            let mut c = sp.clone();
            c.trace_id = trace_id.clone();
            c.span_id = format!("{}{suffix}", sp.span_id);
            c.parent_span_id = sp.parent_span_id.as_ref().map(|p| format!("{p}{suffix}"));
            c.start_time = shift(sp.start_time, by);
            out.records.spans.push(c);
        }
        let clone_ts = shift(t0, by);
        out.records.alerts.push(Alert {
            alert_id: format!("{}{suffix}", alert.alert_id),
            timestamp: clone_ts,
            trace_id,
            entry_span_id: format!("{}{suffix}", alert.entry_span_id),
            description: alert.description.clone(),
            binding: None,
        });

        let Some(target) = target.as_ref().filter(|_| perturbed) else { continue };
        let from = t0 - BASELINE_MS - w;
        let to = t0 + w;
        let baseline: HashMap<&str, MetricStat> = {
            let mut series: HashMap<&str, Vec<f64>> = HashMap::new();
            for m in s.records.metrics.iter().filter(|m| &m.component == target && m.timestamp >= t0 - BASELINE_MS && m.timestamp < t0 - w / 2) {
                series.entry(m.metric.as_str()).or_default().push(m.value);
            }
            series.into_iter().filter_map(|(k, v)| MetricStat::of(&v).map(|st| (k, st))).collect()
        };
        for m in s.records.metrics.iter().filter(|m| (from..=to).contains(&m.timestamp)) {
            let mut c = m.clone();
            c.timestamp = shift(m.timestamp, region);
            if &c.component == target && (c.timestamp - clone_ts).abs() <= w / 2 {
                let sd = baseline.get(m.metric.as_str()).map_or(1.0, |st| st.std);
                c.value = ((c.value + jitter.magnitude * sd) * 1000.0).round() / 1000.0;
            }
            out.records.metrics.push(c);
        }
        for l in s.records.logs.iter().filter(|l| (from..=to).contains(&l.timestamp)) {
            let mut c = l.clone();
            c.timestamp = shift(l.timestamp, region);
            out.records.logs.push(c);
        }
    }
    out.records.alerts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.alert_id.cmp(&b.alert_id)));
    out.records.logs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.component.cmp(&b.component)));
    out.records.metrics.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.component.cmp(&b.component))
            .then_with(|| a.metric.cmp(&b.metric))
    });
    Ok(out)
}

/// [`duplicate_alert`] applied to the scenario's earliest alert.
pub fn duplicate_alerts(s: &Scenario, copies: usize, jitter: &Jitter) -> Result<Scenario, ScenarioError> {
    let first = s
        .records
        .alerts
        .iter()
        .min_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.alert_id.cmp(&b.alert_id)))
        .ok_or_else(|| ScenarioError::Spec("scenario has no alerts".into()))?
        .alert_id
        .clone();
    duplicate_alert(s, &first, copies, jitter)
}
