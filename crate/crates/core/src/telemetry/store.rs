use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::{
    Alert, LogEntry, MetricSample, Millis, Span, TelemetryError, TelemetryRecords, Topology,
    DEFAULT_WINDOW_MS,
};

/// Row counts produced by ingest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub spans: usize,
    pub traces: usize,
    pub logs: usize,
    pub metrics: usize,
    pub alerts: usize,
    pub topology_entries: usize,
}

/// Logs and metrics for one component inside a closed time interval.
#[derive(Debug, Clone, Default)]
pub struct Slice<'a> {
    pub logs: Vec<&'a LogEntry>,
    pub metrics: Vec<&'a MetricSample>,
}

/// Immutable, indexed telemetry. Safe to share across threads for reads.
#[derive(Debug, Clone)]
pub struct TelemetryStore {
    spans: Vec<Span>,
    logs: Vec<LogEntry>,
    metrics: Vec<MetricSample>,
    alerts: Vec<Alert>,
    topology: Topology,
    span_by_id: HashMap<String, usize>,
    children: HashMap<String, Vec<usize>>,
    roots: BTreeMap<String, usize>,
    trace_spans: BTreeMap<String, Vec<usize>>,
    logs_by_component: HashMap<String, Vec<usize>>,
    metrics_by_component: HashMap<String, Vec<usize>>,
    series: HashMap<String, BTreeMap<String, Vec<usize>>>,
}

impl TelemetryStore {
    /// Validates and indexes a record set. Alerts without a trace id are
    /// bound to the nearest root span within half the default window.
    pub fn build(records: TelemetryRecords) -> Result<Self, TelemetryError> {
        Self::build_with_window(records, DEFAULT_WINDOW_MS)
    }

    pub fn build_with_window(records: TelemetryRecords, window_ms: Millis) -> Result<Self, TelemetryError> {
        let TelemetryRecords {
            spans,
            logs,
            metrics,
            alerts,
            topology,
        } = records;

        let mut span_by_id = HashMap::with_capacity(spans.len());
        for (i, span) in spans.iter().enumerate() {
            if span_by_id.insert(span.span_id.clone(), i).is_some() {
                return Err(TelemetryError::DuplicateSpan(span.span_id.clone()));
            }
        }

        let mut dangling: Vec<String> = spans
            .iter()
            .filter(|s| {
                s.parent_span_id
                    .as_ref()
                    .is_some_and(|p| span_by_id.get(p).map(|&j| spans[j].trace_id != s.trace_id).unwrap_or(true))
            })
            .map(|s| s.span_id.clone())
            .collect();
        if !dangling.is_empty() {
            dangling.sort();
            return Err(TelemetryError::DanglingParent { span_ids: dangling });
        }

        if let Some(span) = spans.iter().find(|s| !topology.pod_to_service.contains_key(&s.cmdb_id)) {
            return Err(TelemetryError::MissingTopology(span.cmdb_id.clone()));
        }

        let mut children: HashMap<String, Vec<usize>> = HashMap::new();
        let mut trace_spans: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut roots: BTreeMap<String, usize> = BTreeMap::new();
        for (i, span) in spans.iter().enumerate() {
            trace_spans.entry(span.trace_id.clone()).or_default().push(i);
            match &span.parent_span_id {
                Some(p) => children.entry(p.clone()).or_default().push(i),
                None => {
                    if let Some(prev) = roots.insert(span.trace_id.clone(), i) {
                        return Err(TelemetryError::InvalidTrace {
                            trace_id: span.trace_id.clone(),
                            reason: format!(
                                "multiple root spans (`{}`, `{}`)",
                                spans[prev].span_id, span.span_id
                            ),
                        });
                    }
                }
            }
        }
        for list in children.values_mut() {
            list.sort_by(|&a, &b| {
                spans[a]
                    .start_time
                    .cmp(&spans[b].start_time)
                    .then_with(|| spans[a].span_id.cmp(&spans[b].span_id))
            });
        }
        for (trace_id, members) in &trace_spans {
            let Some(&root) = roots.get(trace_id) else {
                return Err(TelemetryError::InvalidTrace {
                    trace_id: trace_id.clone(),
                    reason: "no root span".into(),
                });
            };
            // every span must be reachable from the root, otherwise a cycle exists
            let mut reached = 0usize;
            let mut stack = vec![root];
            while let Some(i) = stack.pop() {
                reached += 1;
                if let Some(kids) = children.get(&spans[i].span_id) {
                    stack.extend(kids.iter().copied());
                }
            }
            if reached != members.len() {
                return Err(TelemetryError::InvalidTrace {
                    trace_id: trace_id.clone(),
                    reason: "cycle in parent links".into(),
                });
            }
        }

        let mut logs_by_component: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, l) in logs.iter().enumerate() {
            logs_by_component.entry(l.component.clone()).or_default().push(i);
        }
        for list in logs_by_component.values_mut() {
            list.sort_by_key(|&i| (logs[i].timestamp, i));
        }

        let mut metrics_by_component: HashMap<String, Vec<usize>> = HashMap::new();
        let mut series: HashMap<String, BTreeMap<String, Vec<usize>>> = HashMap::new();
        for (i, m) in metrics.iter().enumerate() {
            metrics_by_component.entry(m.component.clone()).or_default().push(i);
            series
                .entry(m.component.clone())
                .or_default()
                .entry(m.metric.clone())
                .or_default()
                .push(i);
        }
        for list in metrics_by_component.values_mut() {
            list.sort_by(|&a, &b| {
                (metrics[a].timestamp, &metrics[a].metric, a).cmp(&(metrics[b].timestamp, &metrics[b].metric, b))
            });
        }
        for by_metric in series.values_mut() {
            for list in by_metric.values_mut() {
                list.sort_by_key(|&i| (metrics[i].timestamp, i));
            }
        }

        let mut store = Self {
            spans,
            logs,
            metrics,
            alerts: Vec::new(),
            topology,
            span_by_id,
            children,
            roots,
            trace_spans,
            logs_by_component,
            metrics_by_component,
            series,
        };
        store.alerts = alerts
            .into_iter()
            .map(|a| store.resolve_alert(a, window_ms))
            .collect::<Result<_, _>>()?;
        Ok(store)
    }

    fn resolve_alert(&self, mut alert: Alert, window_ms: Millis) -> Result<Alert, TelemetryError> {
        if alert.trace_id.is_empty() {
            let radius = window_ms / 2;
            let nearest = self
                .roots
                .iter()
                .map(|(t, &i)| (t, (self.spans[i].start_time - alert.timestamp).abs()))
                .filter(|(_, gap)| *gap <= radius)
                .min_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
            let Some((trace_id, gap)) = nearest else {
                return Err(TelemetryError::InvalidAlert {
                    alert_id: alert.alert_id,
                    reason: "no trace id and no root span within the window".into(),
                });
            };
            alert.binding = Some(format!("bound to trace {trace_id} (nearest root span, {gap} ms)"));
            alert.trace_id = trace_id.clone();
        }
        let Some(&root) = self.roots.get(&alert.trace_id) else {
            return Err(TelemetryError::InvalidAlert {
                alert_id: alert.alert_id,
                reason: format!("unknown trace `{}`", alert.trace_id),
            });
        };
        if alert.entry_span_id.is_empty() {
            alert.entry_span_id = self.spans[root].span_id.clone();
        } else if alert.entry_span_id != self.spans[root].span_id {
            return Err(TelemetryError::InvalidAlert {
                alert_id: alert.alert_id,
                reason: format!(
                    "entry span `{}` is not the root of trace `{}`",
                    alert.entry_span_id, alert.trace_id
                ),
            });
        }
        Ok(alert)
    }

    pub fn report(&self) -> IngestReport {
        IngestReport {
            spans: self.spans.len(),
            traces: self.roots.len(),
            logs: self.logs.len(),
            metrics: self.metrics.len(),
            alerts: self.alerts.len(),
            topology_entries: self.topology.len(),
        }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn logs(&self) -> &[LogEntry] {
        &self.logs
    }

    pub fn metrics(&self) -> &[MetricSample] {
        &self.metrics
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn alert(&self, alert_id: &str) -> Option<&Alert> {
        self.alerts.iter().find(|a| a.alert_id == alert_id)
    }

    pub fn trace_ids(&self) -> impl Iterator<Item = &str> {
        self.roots.keys().map(String::as_str)
    }

    pub fn span(&self, span_id: &str) -> Result<&Span, TelemetryError> {
        self.span_by_id
            .get(span_id)
            .map(|&i| &self.spans[i])
            .ok_or_else(|| TelemetryError::SpanNotFound(span_id.to_string()))
    }

    pub fn root_of(&self, trace_id: &str) -> Result<&Span, TelemetryError> {
        self.roots
            .get(trace_id)
            .map(|&i| &self.spans[i])
            .ok_or_else(|| TelemetryError::TraceNotFound(trace_id.to_string()))
    }

    pub fn trace(&self, trace_id: &str) -> Result<Vec<&Span>, TelemetryError> {
        self.trace_spans
            .get(trace_id)
            .map(|ids| ids.iter().map(|&i| &self.spans[i]).collect())
            .ok_or_else(|| TelemetryError::TraceNotFound(trace_id.to_string()))
    }

    /// Direct children ordered by start time, ties by span id.
    pub fn children_of(&self, span_id: &str) -> Result<Vec<&Span>, TelemetryError> {
        self.span(span_id)?;
        Ok(self
            .children
            .get(span_id)
            .map(|ids| ids.iter().map(|&i| &self.spans[i]).collect())
            .unwrap_or_default())
    }

    /// Records of `component` with timestamp in `[t0 - delta, t0 + delta]`.
    pub fn slice(&self, t0: Millis, delta: Millis, component: &str) -> Slice<'_> {
        let (from, to) = (t0 - delta, t0 + delta);
        Slice {
            logs: self.logs_between(component, from, to),
            metrics: self
                .metrics_by_component
                .get(component)
                .map(|ids| window(ids, from, to, |i| self.metrics[i].timestamp))
                .unwrap_or_default()
                .iter()
                .map(|&i| &self.metrics[i])
                .collect(),
        }
    }

    /// Logs of `component` with timestamp in `[from, to]`, time-ordered.
    pub fn logs_between(&self, component: &str, from: Millis, to: Millis) -> Vec<&LogEntry> {
        self.logs_by_component
            .get(component)
            .map(|ids| window(ids, from, to, |i| self.logs[i].timestamp))
            .unwrap_or_default()
            .iter()
            .map(|&i| &self.logs[i])
            .collect()
    }

    /// Metric names recorded for `component`, sorted.
    pub fn metric_names(&self, component: &str) -> Vec<&str> {
        self.series
            .get(component)
            .map(|m| m.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// `(timestamp, value)` points of one series with timestamp in `[from, to]`.
    pub fn series_between(&self, component: &str, metric: &str, from: Millis, to: Millis) -> Vec<(Millis, f64)> {
        self.series
            .get(component)
            .and_then(|m| m.get(metric))
            .map(|ids| window(ids, from, to, |i| self.metrics[i].timestamp))
            .unwrap_or_default()
            .iter()
            .map(|&i| (self.metrics[i].timestamp, self.metrics[i].value))
            .collect()
    }

    /// Copies the records back out, alerts included in their resolved form.
    pub fn to_records(&self) -> TelemetryRecords {
        TelemetryRecords {
            spans: self.spans.clone(),
            logs: self.logs.clone(),
            metrics: self.metrics.clone(),
            alerts: self.alerts.clone(),
            topology: self.topology.clone(),
        }
    }
}

/// Sub-slice of a time-sorted index list falling in `[from, to]`.
fn window(ids: &[usize], from: Millis, to: Millis, ts: impl Fn(usize) -> Millis) -> &[usize] {
    if from > to {
        return &[];
    }
    let lo = ids.partition_point(|&i| ts(i) < from);
    let hi = ids.partition_point(|&i| ts(i) <= to);
    &ids[lo..hi]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::LogLevel;

    fn span(id: &str, parent: Option<&str>, start: Millis) -> Span {
        Span {
            trace_id: "t1".into(),
            span_id: id.into(),
            parent_span_id: parent.map(Into::into),
            cmdb_id: "pod-a".into(),
            service: "svc".into(),
            operation: format!("op-{id}"),
            start_time: start,
            duration: 5,
            status_code: 0,
        }
    }

    fn topology() -> Topology {
        let mut t = Topology::default();
        t.insert("pod-a", "svc", "node-1");
        t
    }

    fn records(spans: Vec<Span>) -> TelemetryRecords {
        TelemetryRecords {
            spans,
            topology: topology(),
            ..Default::default()
        }
    }

    #[test]
    fn children_tie_broken_by_span_id() {
        let store = TelemetryStore::build(records(vec![
            span("root", None, 100),
            span("c-b", Some("root"), 110),
            span("c-a", Some("root"), 110),
            span("c-0", Some("root"), 105),
        ]))
        .unwrap();
        let ids: Vec<_> = store.children_of("root").unwrap().iter().map(|s| s.span_id.as_str()).collect();
        assert_eq!(ids, ["c-0", "c-a", "c-b"]);
        assert!(store.children_of("c-a").unwrap().is_empty());
        assert!(matches!(store.children_of("nope"), Err(TelemetryError::SpanNotFound(_))));
    }

    #[test]
    fn dangling_parent_is_reported() {
        let err = TelemetryStore::build(records(vec![span("root", None, 1), span("x", Some("ghost"), 2)])).unwrap_err();
        match err {
            TelemetryError::DanglingParent { span_ids } => assert_eq!(span_ids, ["x"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let err = TelemetryStore::build(records(vec![
            span("root", None, 1),
            span("a", Some("b"), 2),
            span("b", Some("a"), 3),
        ]))
        .unwrap_err();
        assert!(matches!(err, TelemetryError::InvalidTrace { .. }), "{err}");
    }

    #[test]
    fn missing_topology_names_the_pod() {
        let mut s = span("root", None, 1);
        s.cmdb_id = "pod-z".into();
        let err = TelemetryStore::build(records(vec![s])).unwrap_err();
        assert!(matches!(err, TelemetryError::MissingTopology(ref p) if p == "pod-z"));
    }

    #[test]
    fn slice_interval_is_closed() {
        let mk_log = |ts| LogEntry {
            timestamp: ts,
            component: "pod-a".into(),
            level: LogLevel::Info,
            kind: "k".into(),
            message: String::new(),
        };
        let mk_metric = |ts| MetricSample {
            timestamp: ts,
            component: "pod-a".into(),
            metric: "cpu".into(),
            value: 1.0,
        };
        let store = TelemetryStore::build(TelemetryRecords {
            logs: [899, 900, 1100, 1101].into_iter().map(mk_log).collect(),
            metrics: [899, 900, 1100, 1101].into_iter().map(mk_metric).collect(),
            topology: topology(),
            ..Default::default()
        })
        .unwrap();
        let slice = store.slice(1000, 100, "pod-a");
        assert_eq!(slice.logs.iter().map(|l| l.timestamp).collect::<Vec<_>>(), [900, 1100]);
        assert_eq!(slice.metrics.iter().map(|m| m.timestamp).collect::<Vec<_>>(), [900, 1100]);
        let empty = store.slice(1000, 100, "elsewhere");
        assert!(empty.logs.is_empty() && empty.metrics.is_empty());
    }

    #[test]
    fn alert_without_trace_binds_to_nearest_root() {
        let mut a = span("r1", None, 1_000);
        a.trace_id = "ta".into();
        let mut b = span("r2", None, 5_000);
        b.trace_id = "tb".into();
        let store = TelemetryStore::build(TelemetryRecords {
            spans: vec![a, b],
            alerts: vec![Alert {
                alert_id: "al".into(),
                timestamp: 4_200,
                trace_id: String::new(),
                entry_span_id: String::new(),
                description: String::new(),
                binding: None,
            }],
            topology: topology(),
            ..Default::default()
        })
        .unwrap();
        let alert = &store.alerts()[0];
        assert_eq!(alert.trace_id, "tb");
        assert_eq!(alert.entry_span_id, "r2");
        assert!(alert.binding.as_deref().unwrap().contains("tb"));
    }

    #[test]
    fn alert_entry_must_be_root() {
        let err = TelemetryStore::build(TelemetryRecords {
            spans: vec![span("root", None, 1), span("c", Some("root"), 2)],
            alerts: vec![Alert {
                alert_id: "al".into(),
                timestamp: 1,
                trace_id: "t1".into(),
                entry_span_id: "c".into(),
                description: String::new(),
                binding: None,
            }],
            topology: topology(),
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, TelemetryError::InvalidAlert { .. }));
    }
}
