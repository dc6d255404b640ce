//! Per-alert causal graphs.
//!
//! A graph has one node per distinct `(pod, operation)` pair on the alert's
//! trace and one edge per parent→child call. Nodes carry metric and log
//! summaries over the alert window; edges carry the call latency and status.

mod compare;
mod text;
mod wl;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{Alert, Millis, TelemetryError, TelemetryStore};

pub use compare::{attribute_distance, distances, divergence, similarity, similarity_with, symmetric_distance, SIGMA_FLOOR};
pub use text::{parse_canonical, ParseError};
pub use wl::{embed, feature_bucket, fingerprint, wl_features, Embedding, Fingerprint, DEFAULT_DIM, EMBED_SEED, WL_ROUNDS};

/// Identity of a node within and across graphs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub pod: String,
    pub op: String,
}

impl NodeKey {
    pub fn new(pod: impl Into<String>, op: impl Into<String>) -> Self {
        Self {
            pod: pod.into(),
            op: op.into(),
        }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.pod, self.op)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

impl MetricStat {
    /// Population mean and standard deviation. `None` for an empty series.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAttributes {
    pub service: String,
    pub pod: String,
    pub op: String,
    pub metric_summary: BTreeMap<String, MetricStat>,
    pub log_summary: BTreeMap<String, u64>,
    /// Spans of the source trace that map onto this node, in trace order.
    pub spans: Vec<String>,
}

impl NodeAttributes {
    pub fn new(service: impl Into<String>, pod: impl Into<String>, op: impl Into<String>) -> Self {
        Self {
            service: service.into(),
            pod: pod.into(),
            op: op.into(),
            metric_summary: BTreeMap::new(),
            log_summary: BTreeMap::new(),
            spans: Vec::new(),
        }
    }

    pub fn key(&self) -> NodeKey {
        NodeKey::new(&self.pod, &self.op)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeAttributes {
    pub call_latency: u64,
    pub status_code: i32,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("edge {from} -> {to} closes a cycle")]
    Cycle { from: NodeKey, to: NodeKey },
    #[error("edge references unknown node {0}")]
    UnknownNode(NodeKey),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub alert_id: String,
    pub window: (Millis, Millis),
    pub nodes: BTreeMap<NodeKey, NodeAttributes>,
    pub edges: BTreeMap<(NodeKey, NodeKey), EdgeAttributes>,
}

impl CausalGraph {
    pub fn new(alert_id: impl Into<String>, window: (Millis, Millis)) -> Self {
        Self {
            alert_id: alert_id.into(),
            window,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&mut self, attrs: NodeAttributes) -> NodeKey {
        let key = attrs.key();
        self.nodes.insert(key.clone(), attrs);
        key
    }

    /// Adds or merges an edge. Repeated calls between the same pair keep the
    /// largest latency and the first non-zero status.
    pub fn add_edge(&mut self, from: NodeKey, to: NodeKey, attrs: EdgeAttributes) -> Result<(), GraphError> {
        for k in [&from, &to] {
            if !self.nodes.contains_key(k) {
                return Err(GraphError::UnknownNode(k.clone()));
            }
        }
        self.edges
            .entry((from, to))
            .and_modify(|e| {
                e.call_latency = e.call_latency.max(attrs.call_latency);
                if e.status_code == 0 {
                    e.status_code = attrs.status_code;
                }
            })
            .or_insert(attrs);
        Ok(())
    }

    pub fn out_neighbors<'a>(&'a self, key: &'a NodeKey) -> impl Iterator<Item = &'a NodeKey> + 'a {
        self.edges.keys().filter(move |(f, _)| f == key).map(|(_, t)| t)
    }

    /// Nodes without incoming edges.
    pub fn roots(&self) -> Vec<&NodeKey> {
        let targets: BTreeSet<&NodeKey> = self.edges.keys().map(|(_, t)| t).collect();
        self.nodes.keys().filter(|k| !targets.contains(k)).collect()
    }

    /// Node owning a span of the source trace.
    pub fn node_of_span(&self, span_id: &str) -> Option<&NodeKey> {
        self.nodes
            .iter()
            .find(|(_, a)| a.spans.iter().any(|s| s == span_id))
            .map(|(k, _)| k)
    }

    /// Whether `to` is reachable from `from` (a node reaches itself).
    pub fn reaches(&self, from: &NodeKey, to: &NodeKey) -> bool {
        let mut seen: BTreeSet<&NodeKey> = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.out_neighbors(n));
            }
        }
        false
    }

    /// Fails with the edge that closes a cycle, if any.
    pub fn check_acyclic(&self) -> Result<(), GraphError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        let mut adjacency: BTreeMap<&NodeKey, Vec<&NodeKey>> = BTreeMap::new();
        for (f, t) in self.edges.keys() {
            adjacency.entry(f).or_default().push(t);
        }
        let mut marks: HashMap<&NodeKey, Mark> = HashMap::new();
        for start in self.nodes.keys() {
            if marks.contains_key(start) {
                continue;
            }
            // iterative DFS: (node, next child index)
            let mut stack: Vec<(&NodeKey, usize)> = vec![(start, 0)];
            marks.insert(start, Mark::Open);
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                let kids = adjacency.get(node).map(Vec::as_slice).unwrap_or(&[]);
                if let Some(&child) = kids.get(*next) {
                    *next += 1;
                    match marks.get(child) {
                        Some(Mark::Open) => {
                            return Err(GraphError::Cycle {
                                from: node.clone(),
                                to: child.clone(),
                            })
                        }
                        Some(Mark::Done) => {}
                        None => {
                            marks.insert(child, Mark::Open);
                            stack.push((child, 0));
                        }
                    }
                } else {
                    marks.insert(node, Mark::Done);
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    /// Canonical text form: nodes by identity key, edges by `(from, to)`.
    pub fn canonical_text(&self) -> String {
        text::write_canonical(self)
    }
}

/// Builds the causal graph of `alert`'s trace. Node summaries cover
/// `[alert.timestamp - window_ms/2, alert.timestamp + window_ms/2]`.
pub fn extract(alert: &Alert, store: &TelemetryStore, window_ms: Millis) -> Result<CausalGraph, GraphError> {
    let mut spans = store.trace(&alert.trace_id)?;
    spans.sort_by(|a, b| a.start_time.cmp(&b.start_time).then_with(|| a.span_id.cmp(&b.span_id)));
    let half = window_ms / 2;
    let mut graph = CausalGraph::new(&alert.alert_id, (alert.timestamp - half, alert.timestamp + half));

    let mut summaries: HashMap<&str, (BTreeMap<String, MetricStat>, BTreeMap<String, u64>)> = HashMap::new();
    let mut key_of_span: HashMap<&str, NodeKey> = HashMap::new();
    for span in &spans {
        let key = NodeKey::new(&span.cmdb_id, &span.operation);
        key_of_span.insert(span.span_id.as_str(), key.clone());
        if let Some(node) = graph.nodes.get_mut(&key) {
            node.spans.push(span.span_id.clone());
            continue;
        }
        let (metric_summary, log_summary) = summaries
            .entry(span.cmdb_id.as_str())
            .or_insert_with(|| summarize(store, &span.cmdb_id, alert.timestamp, half))
            .clone();
        let mut attrs = NodeAttributes::new(&span.service, &span.cmdb_id, &span.operation);
        attrs.metric_summary = metric_summary;
        attrs.log_summary = log_summary;
        attrs.spans.push(span.span_id.clone());
        graph.add_node(attrs);
    }
    for span in &spans {
        if let Some(parent) = &span.parent_span_id {
            let from = key_of_span[parent.as_str()].clone();
            let to = key_of_span[span.span_id.as_str()].clone();
            if graph.reaches(&to, &from) {
                return Err(GraphError::Cycle { from, to });
            }
            graph.add_edge(
                from,
                to,
                EdgeAttributes {
                    call_latency: span.duration,
                    status_code: span.status_code,
                },
            )?;
        }
    }
    graph.check_acyclic()?;
    Ok(graph)
}

fn summarize(
    store: &TelemetryStore,
    pod: &str,
    t0: Millis,
    half: Millis,
) -> (BTreeMap<String, MetricStat>, BTreeMap<String, u64>) {
    let slice = store.slice(t0, half, pod);
    let mut series: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for m in &slice.metrics {
        series.entry(m.metric.as_str()).or_default().push(m.value);
    }
    let metrics = series
        .into_iter()
        .filter_map(|(name, values)| MetricStat::of(&values).map(|s| (name.to_string(), s)))
        .collect();
    let mut logs: BTreeMap<String, u64> = BTreeMap::new();
    for l in &slice.logs {
        *logs.entry(l.kind.clone()).or_default() += 1;
    }
    (metrics, logs)
}
