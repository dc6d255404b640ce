//! Graph-keyed memory of past analyses.
//!
//! Entries are keyed by the causal graph's fingerprint and searched by
//! embedding. [`Memory::decide`] turns the best match into a reuse, resume or
//! fresh decision; [`remap`] carries a stored transcript onto a new graph.

mod persist;

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{divergence, embed, fingerprint, similarity_with, CausalGraph, Embedding, Fingerprint, NodeKey, DEFAULT_DIM};
use crate::telemetry::Millis;
use crate::transcript::Transcript;

pub use persist::{verify_file, MANIFEST_FORMAT};

pub const DEFAULT_TAU_SKIP: f64 = 0.98;
pub const DEFAULT_TAU_PARTIAL: f64 = 0.80;
pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub timestamp: Millis,
    pub alert_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub fingerprint: Fingerprint,
    pub embedding: Embedding,
    pub graph: CausalGraph,
    pub meta: EntryMeta,
    pub transcript: Transcript,
}

impl MemoryEntry {
    /// Computes the fingerprint and embedding of `graph`.
    pub fn new(graph: CausalGraph, transcript: Transcript, timestamp: Millis, dim: usize) -> Self {
        Self {
            fingerprint: fingerprint(&graph),
            embedding: embed(&graph, dim),
            meta: EntryMeta {
                timestamp,
                alert_id: graph.alert_id.clone(),
            },
            graph,
            transcript,
        }
    }

    /// Checks that the keys match the graph and every live, error-free step
    /// resolves to a node.
    pub fn validate(&self, dim: usize) -> Result<(), MemoryError> {
        let computed = fingerprint(&self.graph);
        if computed != self.fingerprint {
            return Err(MemoryError::FingerprintMismatch {
                alert_id: self.meta.alert_id.clone(),
                stored: self.fingerprint.to_hex(),
                computed: computed.to_hex(),
            });
        }
        if self.embedding != embed(&self.graph, dim) {
            return Err(MemoryError::EmbeddingMismatch {
                alert_id: self.meta.alert_id.clone(),
            });
        }
        if let Some(step) = self
            .transcript
            .steps
            .iter()
            .find(|s| !s.stale && s.error.is_none() && !self.graph.nodes.contains_key(&s.node))
        {
            return Err(MemoryError::UnresolvedStep {
                alert_id: self.meta.alert_id.clone(),
                step: step.index,
                node: step.node.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("entry {alert_id}: stored fingerprint {stored} differs from computed {computed}")]
    FingerprintMismatch {
        alert_id: String,
        stored: String,
        computed: String,
    },
    #[error("entry {alert_id}: embedding does not match its graph")]
    EmbeddingMismatch { alert_id: String },
    #[error("entry {alert_id}: step {step} references node {node} absent from the graph")]
    UnresolvedStep { alert_id: String, step: usize, node: NodeKey },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionKind {
    Reuse,
    Resume,
    Fresh,
}

impl DecisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Reuse => "reuse",
            Self::Resume => "resume",
            Self::Fresh => "fresh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub kind: DecisionKind,
    pub matched: Option<Arc<MemoryEntry>>,
    pub similarity: f64,
    /// Non-empty exactly when `kind` is `Resume`.
    pub divergent: BTreeSet<NodeKey>,
    /// A resume-band match without divergent nodes, treated as reuse.
    pub degenerate: bool,
}

impl Decision {
    pub fn fresh() -> Self {
        Self {
            kind: DecisionKind::Fresh,
            matched: None,
            similarity: 0.0,
            divergent: BTreeSet::new(),
            degenerate: false,
        }
    }

    pub fn matched_alert(&self) -> Option<&str> {
        self.matched.as_ref().map(|m| m.meta.alert_id.as_str())
    }
}

/// Thresholds of the reuse decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_skip: f64,
    pub tau_partial: f64,
    pub delta: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_skip: DEFAULT_TAU_SKIP,
            tau_partial: DEFAULT_TAU_PARTIAL,
            delta: DEFAULT_DELTA,
        }
    }
}

/// Records an entry displaced by a newer one with the same fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replacement {
    pub fingerprint: Fingerprint,
    pub replaced: String,
    pub by: String,
}

/// Entry store with exact linear-scan retrieval.
///
/// A linear scan over embeddings is cheap at the sizes this runs at (up to
/// ~10⁴ entries); `candidates` is the seam for an approximate index.
#[derive(Debug, Clone)]
pub struct Memory {
    dim: usize,
    alpha: f64,
    entries: Vec<Arc<MemoryEntry>>,
    by_fingerprint: HashMap<Fingerprint, usize>,
    by_alert: HashMap<String, usize>,
    replacements: Vec<Replacement>,
}

impl Default for Memory {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, DEFAULT_ALPHA)
    }
}

impl Memory {
    pub fn new(dim: usize, alpha: f64) -> Self {
        Self {
            dim,
            alpha,
            entries: Vec::new(),
            by_fingerprint: HashMap::new(),
            by_alert: HashMap::new(),
            replacements: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in insertion order (a replaced entry keeps its slot).
    pub fn entries(&self) -> &[Arc<MemoryEntry>] {
        &self.entries
    }

    pub fn replacements(&self) -> &[Replacement] {
        &self.replacements
    }

    pub fn get(&self, alert_id: &str) -> Option<&Arc<MemoryEntry>> {
        self.by_alert.get(alert_id).map(|&i| &self.entries[i])
    }

    pub fn by_fingerprint(&self, f: &Fingerprint) -> Option<&Arc<MemoryEntry>> {
        self.by_fingerprint.get(f).map(|&i| &self.entries[i])
    }

    /// Adds `entry`, replacing any entry with the same fingerprint.
    pub fn store(&mut self, entry: MemoryEntry) -> Result<(), MemoryError> {
        entry.validate(self.dim)?;
        self.insert_unchecked(entry);
        Ok(())
    }

    fn insert_unchecked(&mut self, entry: MemoryEntry) {
        let entry = Arc::new(entry);
        match self.by_fingerprint.get(&entry.fingerprint) {
            Some(&i) => {
                let old = std::mem::replace(&mut self.entries[i], entry.clone());
                self.by_alert.remove(&old.meta.alert_id);
                self.replacements.push(Replacement {
                    fingerprint: entry.fingerprint,
                    replaced: old.meta.alert_id.clone(),
                    by: entry.meta.alert_id.clone(),
                });
                self.by_alert.insert(entry.meta.alert_id.clone(), i);
            }
            None => {
                let i = self.entries.len();
                self.by_fingerprint.insert(entry.fingerprint, i);
                self.by_alert.insert(entry.meta.alert_id.clone(), i);
                self.entries.push(entry);
            }
        }
    }

    /// Indices of the `k_prime` entries closest to `e` by cosine.
    fn candidates(&self, e: &Embedding, k_prime: usize) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, m)| (e.cosine(&m.embedding), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(k_prime);
        scored.into_iter().map(|(_, i)| i).collect()
    }

    /// Top-`k` entries by exact similarity, drawn from the `max(4k, 32)`
    /// nearest embeddings. Ties keep insertion order.
    pub fn retrieve(&self, g_new: &CausalGraph, k: usize) -> Vec<(Arc<MemoryEntry>, f64)> {
        assert!(k >= 1, "retrieve needs k >= 1");
        if self.entries.is_empty() {
            return Vec::new();
        }
        let e = embed(g_new, self.dim);
        let mut exact: Vec<(f64, usize)> = self
            .candidates(&e, (4 * k).max(32))
            .into_iter()
            .map(|i| {
                let m = &self.entries[i];
                (similarity_with(g_new, &e, &m.graph, &m.embedding, self.alpha), i)
            })
            .collect();
        exact.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        exact.truncate(k);
        exact.into_iter().map(|(s, i)| (self.entries[i].clone(), s)).collect()
    }

    /// Classifies `g_new` against its best match:
    /// `S ≥ τ_skip` reuse, `τ_partial ≤ S < τ_skip` resume, otherwise fresh.
    pub fn decide(&self, g_new: &CausalGraph, t: &Thresholds) -> Decision {
        assert!(
            0.0 <= t.tau_partial && t.tau_partial <= t.tau_skip && t.tau_skip <= 1.0,
            "thresholds out of order"
        );
        let Some((entry, s)) = self.retrieve(g_new, 1).into_iter().next() else {
            return Decision::fresh();
        };
        if s >= t.tau_skip {
            return Decision {
                kind: DecisionKind::Reuse,
                matched: Some(entry),
                similarity: s,
                divergent: BTreeSet::new(),
                degenerate: false,
            };
        }
        if s >= t.tau_partial {
            let divergent = divergence(g_new, &entry.graph, t.delta);
            let degenerate = divergent.is_empty();
            return Decision {
                kind: if degenerate { DecisionKind::Reuse } else { DecisionKind::Resume },
                matched: Some(entry),
                similarity: s,
                divergent,
                degenerate,
            };
        }
        Decision {
            similarity: s,
            ..Decision::fresh()
        }
    }
}

/// Re-binds a stored transcript onto `g_new` by node identity.
///
/// A step keeps its node when `g_new` has it and moves to the span at the same
/// position in that node's span list (the last one if the list is shorter).
/// Steps whose node is missing are marked stale.
pub fn remap(entry: &MemoryEntry, g_new: &CausalGraph) -> Transcript {
    let mut t = entry.transcript.clone();
    t.alert_id = g_new.alert_id.clone();
    for step in &mut t.steps {
        match g_new.nodes.get(&step.node) {
            Some(node) if !node.spans.is_empty() => {
                let pos = entry
                    .graph
                    .nodes
                    .get(&step.node)
                    .and_then(|old| old.spans.iter().position(|s| *s == step.span))
                    .unwrap_or(0)
                    .min(node.spans.len() - 1);
                step.span = node.spans[pos].clone();
            }
            _ => step.stale = true,
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeAttributes, MetricStat, NodeAttributes};
    use crate::transcript::{Stage, Step, Verdict};

    pub(super) fn chain(alert: &str, pods: &[&str], mean: f64) -> CausalGraph {
        let mut g = CausalGraph::new(alert, (0, 60_000));
        let mut prev: Option<NodeKey> = None;
        for (i, pod) in pods.iter().enumerate() {
            let mut n = NodeAttributes::new(pod.split('-').next().unwrap(), *pod, "op");
            n.metric_summary.insert("cpu".into(), MetricStat { mean, std: 1.0 });
            n.spans.push(format!("{alert}-s{i}"));
            let k = g.add_node(n);
            if let Some(p) = prev {
                g.add_edge(p, k.clone(), EdgeAttributes { call_latency: 10, status_code: 0 }).unwrap();
            }
            prev = Some(k);
        }
        g
    }

    pub(super) fn transcript_over(g: &CausalGraph) -> Transcript {
        let mut t = Transcript::new(&g.alert_id);
        for (i, (key, node)) in g.nodes.iter().enumerate() {
            t.steps.push(Step {
                index: i,
                stage: Stage::Initial,
                node: key.clone(),
                span: node.spans[0].clone(),
                pod: node.pod.clone(),
                service: node.service.clone(),
                pod_service: Some(node.service.clone()),
                host: Some("n".into()),
                operation: node.op.clone(),
                start_time: 0,
                duration: 1,
                status: 0,
                depth: i,
                instruction: format!("inspect {key}"),
                trace_evidence: vec![],
                log_evidence: None,
                metric_evidence: None,
                verdict: Verdict::Expanded,
                error: None,
                stale: false,
            });
        }
        t.initial_len = t.steps.len();
        t
    }

    pub(super) fn entry(g: CausalGraph) -> MemoryEntry {
        let t = transcript_over(&g);
        MemoryEntry::new(g, t, 0, DEFAULT_DIM)
    }

    #[test]
    fn store_and_replace_by_fingerprint() {
        let mut m = Memory::default();
        m.store(entry(chain("a1", &["fe-0", "cart-0"], 1.0))).unwrap();
        assert_eq!(m.len(), 1);
        m.store(entry(chain("a2", &["fe-0", "cart-0"], 5.0))).unwrap();
        assert_eq!(m.len(), 1);
        assert!(m.get("a1").is_none());
        assert_eq!(m.get("a2").unwrap().transcript.alert_id, "a2");
        assert_eq!(m.replacements().len(), 1);
    }

    #[test]
    fn store_rejects_bad_fingerprint() {
        let mut e = entry(chain("a1", &["fe-0"], 1.0));
        e.fingerprint = Fingerprint([0; 32]);
        assert!(matches!(
            Memory::default().store(e),
            Err(MemoryError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn identical_graph_is_reused() {
        let mut m = Memory::default();
        let g = chain("a1", &["fe-0", "cart-0", "db-0"], 1.0);
        m.store(entry(g.clone())).unwrap();
        let hit = m.retrieve(&g, 1);
        assert!((hit[0].1 - 1.0).abs() < 1e-12);
        let d = m.decide(&g, &Thresholds { tau_skip: 0.95, ..Default::default() });
        assert_eq!(d.kind, DecisionKind::Reuse);
        assert_eq!(Memory::default().decide(&g, &Thresholds::default()).kind, DecisionKind::Fresh);
    }

    #[test]
    fn perturbed_node_resumes_there() {
        let mut m = Memory::default();
        let g = chain("a1", &["fe-0", "cart-0", "db-0"], 1.0);
        m.store(entry(g.clone())).unwrap();
        let mut g2 = g.clone();
        g2.alert_id = "a2".into();
        let key = NodeKey::new("cart-0", "op");
        g2.nodes.get_mut(&key).unwrap().metric_summary.insert("cpu".into(), MetricStat { mean: 4.0, std: 1.0 });
        let d = m.decide(&g2, &Thresholds::default());
        assert_eq!(d.kind, DecisionKind::Resume, "similarity {}", d.similarity);
        assert_eq!(d.divergent, BTreeSet::from([key]));
    }

    #[test]
    fn remap_marks_missing_nodes_stale() {
        let g = chain("a1", &["fe-0", "cart-0", "db-0"], 1.0);
        let e = entry(g.clone());
        let same = remap(&e, &chain("a2", &["fe-0", "cart-0", "db-0"], 1.0));
        assert!(same.steps.iter().all(|s| !s.stale));
        assert!(same.steps.iter().all(|s| s.span.starts_with("a2-")));
        let partial = remap(&e, &chain("a3", &["fe-0", "cart-0"], 1.0));
        let stale: Vec<_> = partial.steps.iter().filter(|s| s.stale).map(|s| s.pod.as_str()).collect();
        assert_eq!(stale, ["db-0"]);
    }
}
