use std::collections::{BTreeMap, HashSet};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::policy::Policy;
use super::recursion::{critical_reflection, final_review, initial_reasoning, reflect_from};
use super::{AnalysisConfig, Counters, ReasonerError};
use crate::agents::{ConsolidatorWeights, RankedRootCauses};
use crate::graph::{extract, CausalGraph};
use crate::memory::{remap, Decision, DecisionKind, Memory, MemoryEntry};
use crate::telemetry::{Alert, AlertWindow, Level, Millis, TelemetryStore};
use crate::transcript::{Stage, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub kind: DecisionKind,
    pub similarity: f64,
    pub matched: Option<String>,
    pub divergent: Vec<String>,
    pub degenerate: bool,
}

impl From<&Decision> for DecisionSummary {
    fn from(d: &Decision) -> Self {
        Self {
            kind: d.kind,
            similarity: d.similarity,
            matched: d.matched_alert().map(String::from),
            divergent: d.divergent.iter().map(ToString::to_string).collect(),
            degenerate: d.degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertAnalysis {
    pub alert_id: String,
    pub timestamp: Millis,
    pub decision: DecisionSummary,
    pub ranking: RankedRootCauses,
    pub transcript: Transcript,
    pub counters: Counters,
    /// Wall-clock time of the analysis.
    pub wall_ms: f64,
    /// Whether the result made it into memory.
    pub saved: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub save_error: Option<String>,
}

/// The reproducible part of an [`AlertAnalysis`], as written to disk: no
/// timing, plus the consolidator weights needed to recompute the ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnalysis {
    pub alert_id: String,
    pub timestamp: Millis,
    pub decision: DecisionSummary,
    pub counters: Counters,
    pub weights: ConsolidatorWeights,
    pub ranking: RankedRootCauses,
    pub transcript: Transcript,
}

impl StoredAnalysis {
    pub fn new(a: &AlertAnalysis, weights: ConsolidatorWeights) -> Self {
        Self {
            alert_id: a.alert_id.clone(),
            timestamp: a.timestamp,
            decision: a.decision.clone(),
            counters: a.counters,
            weights,
            ranking: a.ranking.clone(),
            transcript: a.transcript.clone(),
        }
    }

    /// Re-runs the final review over the stored transcript.
    pub fn recompute(&self) -> RankedRootCauses {
        final_review(self.transcript.initial(), self.transcript.reflection(), &self.weights)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes") + "\n"
    }
}

/// Refreshes span-derived fields of remapped steps from the current store.
fn refresh(t: &mut Transcript, store: &TelemetryStore) {
    for step in t.steps.iter_mut().filter(|s| !s.stale) {
        if let Ok(span) = store.span(&step.span) {
            step.start_time = span.start_time;
            step.duration = span.duration;
            step.status = span.status_code;
        }
    }
}

fn fresh_transcript<P: Policy + ?Sized>(
    alert: &Alert,
    store: &TelemetryStore,
    policy: &P,
    cfg: &AnalysisConfig,
) -> Result<(Transcript, Counters), ReasonerError> {
    let agents = cfg.agents(store);
    let g0 = initial_reasoning(&alert.entry_span_id, policy, agents, cfg.budget)?;
    let g1 = critical_reflection(&g0.steps, policy, agents, cfg.budget)?;
    let mut counters = g0.counters;
    counters += g1.counters;
    let t = Transcript::join(g0.into_transcript(&alert.alert_id), g1.into_transcript(&alert.alert_id));
    Ok((t, counters))
}

/// Keeps the stored steps that still hold and re-runs reflection from the
/// spans of the divergent nodes.
fn resume_transcript<P: Policy + ?Sized>(
    alert: &Alert,
    store: &TelemetryStore,
    graph: &CausalGraph,
    decision: &Decision,
    matched: &MemoryEntry,
    policy: &P,
    cfg: &AnalysisConfig,
) -> Result<(Transcript, Counters), ReasonerError> {
    let mut remapped = remap(matched, graph);
    refresh(&mut remapped, store);

    let mut seeds: Vec<(Millis, String)> = decision
        .divergent
        .iter()
        .filter_map(|k| graph.nodes.get(k))
        .flat_map(|n| n.spans.iter())
        .filter_map(|s| store.span(s).ok().map(|sp| (sp.start_time, sp.span_id.clone())))
        .collect();
    seeds.sort();
    let seeds: Vec<String> = seeds.into_iter().map(|(_, s)| s).collect();
    let fragment = reflect_from(&seeds, policy, cfg.agents(store), cfg.budget)?;

    let revisited: HashSet<&str> = fragment.steps.iter().map(|s| s.span.as_str()).collect();
    let kept: Vec<_> = remapped
        .steps
        .into_iter()
        .filter(|s| !s.stale && !decision.divergent.contains(&s.node) && !revisited.contains(s.span.as_str()))
        .collect();
    let (initial, mut reflection): (Vec<_>, Vec<_>) = kept.into_iter().partition(|s| s.stage == Stage::Initial);
    reflection.extend(fragment.steps);

    let mut g0 = Transcript::new(&alert.alert_id);
    g0.steps = initial;
    let mut g1 = Transcript::new(&alert.alert_id);
    g1.steps = reflection;
    g1.truncated = fragment.truncated || remapped.truncated;
    Ok((Transcript::join(g0, g1), fragment.counters))
}

/// Decides against `memory` and produces the transcript and ranking, without
/// storing anything.
fn run_alert<P: Policy + ?Sized>(
    alert: &Alert,
    store: &TelemetryStore,
    memory: Option<&Memory>,
    policy: &P,
    cfg: &AnalysisConfig,
) -> Result<(AlertAnalysis, CausalGraph), ReasonerError> {
    let started = Instant::now();
    let graph = extract(alert, store, cfg.window_ms)?;
    let decision = memory.map_or_else(Decision::fresh, |m| m.decide(&graph, &cfg.thresholds));

    let (transcript, counters) = match (decision.kind, &decision.matched) {
        (DecisionKind::Reuse, Some(matched)) => {
            let mut t = remap(matched, &graph);
            refresh(&mut t, store);
            (t, Counters::default())
        }
        (DecisionKind::Resume, Some(matched)) => {
            resume_transcript(alert, store, &graph, &decision, matched, policy, cfg)?
        }
        _ => fresh_transcript(alert, store, policy, cfg)?,
    };
    let ranking = final_review(transcript.initial(), transcript.reflection(), &cfg.consolidator());
    let analysis = AlertAnalysis {
        alert_id: alert.alert_id.clone(),
        timestamp: alert.timestamp,
        decision: DecisionSummary::from(&decision),
        ranking,
        transcript,
        counters,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        saved: false,
        save_error: None,
    };
    Ok((analysis, graph))
}

fn commit(memory: Option<&mut Memory>, analysis: &mut AlertAnalysis, graph: CausalGraph) {
    let Some(memory) = memory else { return };
    let entry = MemoryEntry::new(graph, analysis.transcript.clone(), analysis.timestamp, memory.dim());
    match memory.store(entry) {
        Ok(()) => analysis.saved = true,
        Err(e) => analysis.save_error = Some(e.to_string()),
    }
}

/// Full analysis of one alert.
///
/// Builds the alert's causal graph and asks `memory` for a decision:
/// * reuse — the matched transcript is remapped onto the new graph and
///   re-consolidated, with no policy or agent calls;
/// * resume — still-valid remapped steps are kept and reflection restarts at
///   the spans of the divergent nodes;
/// * fresh (or no memory) — all three stages run.
///
/// The result is stored back into `memory`; a failed store leaves the
/// ranking intact and sets `save_error`.
pub fn analyze_alert<P: Policy + ?Sized>(
    alert: &Alert,
    store: &TelemetryStore,
    memory: Option<&mut Memory>,
    policy: &P,
    cfg: &AnalysisConfig,
) -> Result<AlertAnalysis, ReasonerError> {
    let (mut analysis, graph) = run_alert(alert, store, memory.as_deref(), policy, cfg)?;
    commit(memory, &mut analysis, graph);
    Ok(analysis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAlert {
    pub alert_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCandidate {
    pub level: Level,
    pub root_cause: String,
    /// Sum over alerts of `1 / rank`.
    pub score: f64,
    pub first_evidence: Millis,
    /// Alerts whose ranking contains this candidate.
    pub alerts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start: Millis,
    pub end: Millis,
    pub alerts: Vec<AlertAnalysis>,
    pub failed: Vec<FailedAlert>,
    pub ranking: Vec<WindowCandidate>,
}

impl WindowReport {
    pub fn counters(&self) -> Counters {
        let mut c = Counters::default();
        for a in &self.alerts {
            c += a.counters;
        }
        c
    }

    /// `rank,level,root_cause,score,alerts,first_evidence` rows.
    pub fn ranking_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["rank", "level", "root_cause", "score", "alerts", "first_evidence"])
            .expect("in-memory write");
        for (i, c) in self.ranking.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                c.level.to_string(),
                c.root_cause.clone(),
                format!("{:.6}", c.score),
                c.alerts.to_string(),
                c.first_evidence.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// 1-based window rank of a component.
    pub fn rank_of(&self, level: Level, component: &str) -> Option<usize> {
        self.ranking
            .iter()
            .position(|c| c.level == level && c.root_cause == component)
            .map(|i| i + 1)
    }
}

/// Merges per-alert rankings by reciprocal-rank sum. Ties go to the earliest
/// evidence, then the smaller component id, then level.
pub fn aggregate<'a>(rankings: impl IntoIterator<Item = &'a RankedRootCauses>) -> Vec<WindowCandidate> {
    let mut acc: BTreeMap<(Level, String), WindowCandidate> = BTreeMap::new();
    for ranking in rankings {
        for (i, c) in ranking.candidates().iter().enumerate() {
            let w = acc.entry((c.level, c.root_cause.clone())).or_insert_with(|| WindowCandidate {
                level: c.level,
                root_cause: c.root_cause.clone(),
                score: 0.0,
                first_evidence: c.first_evidence,
                alerts: 0,
            });
            w.score += 1.0 / (i + 1) as f64;
            w.first_evidence = w.first_evidence.min(c.first_evidence);
            w.alerts += 1;
        }
    }
    let mut out: Vec<WindowCandidate> = acc.into_values().collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.first_evidence.cmp(&b.first_evidence))
            .then_with(|| a.root_cause.cmp(&b.root_cause))
            .then_with(|| a.level.cmp(&b.level))
    });
    out
}

/// Analyzes every alert of `window` in timestamp order and merges the
/// rankings. A failing alert is reported and skipped.
///
/// With `cfg.parallel > 1`, alerts run in batches of that size: each batch
/// decides against the memory as it stood before the batch, and results are
/// stored in timestamp order afterwards, so the outcome does not depend on
/// thread timing.
pub fn analyze_window<P: Policy + ?Sized>(
    window: &AlertWindow,
    store: &TelemetryStore,
    mut memory: Option<&mut Memory>,
    policy: &P,
    cfg: &AnalysisConfig,
) -> WindowReport {
    let mut alerts: Vec<&Alert> = window.alerts.iter().collect();
    alerts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.alert_id.cmp(&b.alert_id)));

    let mut report = WindowReport {
        start: window.start,
        end: window.end,
        alerts: Vec::new(),
        failed: Vec::new(),
        ranking: Vec::new(),
    };
    for batch in alerts.chunks(cfg.parallel.max(1)) {
        let snapshot = memory.as_deref();
        let results: Vec<_> = if batch.len() == 1 {
            vec![run_alert(batch[0], store, snapshot, policy, cfg)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|a| s.spawn(move || run_alert(a, store, snapshot, policy, cfg)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("analysis thread panicked")).collect()
            })
        };
        for (alert, result) in batch.iter().zip(results) {
            match result {
                Ok((mut analysis, graph)) => {
                    commit(memory.as_deref_mut(), &mut analysis, graph);
                    report.alerts.push(analysis);
                }
                Err(e) => report.failed.push(FailedAlert {
                    alert_id: alert.alert_id.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }
    report.ranking = aggregate(report.alerts.iter().map(|a| &a.ranking));
    report
}
