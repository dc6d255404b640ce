//! Recall@k, MRR and call accounting over scenario corpora.
//!
//! Reports are split in two: [`Report`] holds everything that is a function
//! of the inputs (and is byte-identical across runs), [`Timing`] holds the
//! wall-clock measurements.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{ConsolidatorWeights, RankedRootCauses};
use crate::memory::{DecisionKind, Memory};
use crate::reasoner::{analyze_window, AnalysisConfig, Policy, StoredAnalysis, WindowReport};
use crate::scenario::{Scenario, Truth};
use crate::telemetry::{AlertWindow, Level, Topology};

pub const REPORT_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("k must be at least 1, got {0}")]
    InvalidK(usize),
    #[error("no records to evaluate")]
    Empty,
}

/// How a ranking is matched against the truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    /// The truth component at its own level only.
    #[default]
    Exact,
    /// A pod-level truth is also credited to its service, at whichever of
    /// the two ranks is better.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scenario: usize,
    pub alert_id: String,
    pub truth_level: Level,
    pub truth_component: String,
    pub ranking: RankedRootCauses,
    /// `None` is a miss.
    pub rank_of_truth: Option<usize>,
    pub decision: DecisionKind,
    pub policy_calls: usize,
    pub agent_calls: usize,
    pub wall_ms: u64,
}

impl EvalRecord {
    pub fn new(
        scenario: usize,
        alert_id: &str,
        truth: &Truth,
        ranking: RankedRootCauses,
        topology: &Topology,
        matching: Matching,
    ) -> Self {
        let rank_of_truth = truth_rank(&ranking, truth.level, &truth.component, topology, matching);
        Self {
            scenario,
            alert_id: alert_id.to_string(),
            truth_level: truth.level,
            truth_component: truth.component.clone(),
            ranking,
            rank_of_truth,
            decision: DecisionKind::Fresh,
            policy_calls: 0,
            agent_calls: 0,
            wall_ms: 0,
        }
    }
}

pub fn truth_rank(
    ranking: &RankedRootCauses,
    level: Level,
    component: &str,
    topology: &Topology,
    matching: Matching,
) -> Option<usize> {
    let exact = ranking.rank_of(level, component);
    match (matching, level) {
        (Matching::Relaxed, Level::Pod) => {
            let service = topology.service_of(component).and_then(|s| ranking.rank_of(Level::Service, s));
            match (exact, service) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            }
        }
        _ => exact,
    }
}

/// Fraction of records whose truth is ranked within the top `k`.
pub fn recall_at_k(records: &[EvalRecord], k: usize) -> Result<f64, EvalError> {
    if k < 1 {
        return Err(EvalError::InvalidK(k));
    }
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = records.iter().filter(|r| r.rank_of_truth.is_some_and(|x| x <= k)).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean reciprocal rank; misses count 0, and an empty set scores 0.
pub fn mrr(records: &[EvalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let sum: f64 = records.iter().map(|r| r.rank_of_truth.map_or(0.0, |k| 1.0 / k as f64)).sum();
    sum / records.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub scenario: usize,
    /// Alert id, or empty for a scenario that failed as a whole.
    pub alert_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub memory: MemoryMode,
    pub matching: Matching,
    pub scenarios: usize,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<Failure>,
    pub recall: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub policy_calls: usize,
    pub agent_calls: usize,
    pub decisions: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    /// Mean seconds per analyzed alert.
    pub seconds_per_query: f64,
    /// `(scenario, alert_id, wall_ms)` per record.
    pub per_alert: Vec<(usize, String, f64)>,
}

/// Everything a benchmark run produced.
#[derive(Debug)]
pub struct Benchmark {
    pub report: Report,
    pub timing: Timing,
    /// One report per analyzed window, by scenario.
    pub windows: Vec<Vec<WindowReport>>,
    /// Per-scenario memories when memory is on.
    pub memories: Vec<Option<Memory>>,
    pub weights: ConsolidatorWeights,
}

impl Report {
    fn build(memory: MemoryMode, matching: Matching, scenarios: usize, records: Vec<EvalRecord>, failures: Vec<Failure>) -> Self {
        let recall = REPORT_KS
            .iter()
            .map(|&k| (k, recall_at_k(&records, k).unwrap_or(0.0)))
            .collect();
        let mut decisions: BTreeMap<String, usize> =
            [DecisionKind::Reuse, DecisionKind::Resume, DecisionKind::Fresh].iter().map(|k| (k.as_str().to_string(), 0)).collect();
        for r in &records {
            *decisions.entry(r.decision.as_str().to_string()).or_default() += 1;
        }
        Self {
            memory,
            matching,
            scenarios,
            mrr: mrr(&records),
            policy_calls: records.iter().map(|r| r.policy_calls).sum(),
            agent_calls: records.iter().map(|r| r.agent_calls).sum(),
            recall,
            decisions,
            records,
            failures,
        }
    }

    /// Aggregate metrics as `(name, value)` pairs, in report order.
    pub fn metrics(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("scenarios".to_string(), self.scenarios.to_string()),
            ("alerts".to_string(), self.records.len().to_string()),
            ("failures".to_string(), self.failures.len().to_string()),
        ];
        for (k, v) in &self.recall {
            out.push((format!("recall@{k}"), format!("{v:.6}")));
        }
        out.push(("mrr".into(), format!("{:.6}", self.mrr)));
        out.push(("policy_calls".into(), self.policy_calls.to_string()));
        out.push(("agent_calls".into(), self.agent_calls.to_string()));
        for (k, v) in &self.decisions {
            out.push((format!("decision_{k}"), v.to_string()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let rows = self.metrics();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = format!(
            "memory: {}  matching: {}\n",
            serde_json::to_value(self.memory).expect("enum").as_str().unwrap_or_default(),
            serde_json::to_value(self.matching).expect("enum").as_str().unwrap_or_default()
        );
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<width$}  {v:>12}");
        }
        for f in &self.failures {
            let _ = writeln!(s, "failed: scenario {} {} — {}", f.scenario, f.alert_id, f.error);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv_writer();
        w.write_record(["metric", "value"]).expect("in-memory write");
        for (k, v) in self.metrics() {
            w.write_record([k, v]).expect("in-memory write");
        }
        finish(w)
    }

    /// One row per record.
    pub fn records_csv(&self) -> String {
        let mut w = csv_writer();
        w.write_record([
            "scenario",
            "alert_id",
            "truth_level",
            "truth_component",
            "rank_of_truth",
            "top",
            "decision",
            "policy_calls",
            "agent_calls",
        ])
        .expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.scenario.to_string(),
                r.alert_id.clone(),
                r.truth_level.to_string(),
                r.truth_component.clone(),
                r.rank_of_truth.map_or("miss".to_string(), |k| k.to_string()),
                r.ranking.top().map_or(String::new(), |c| format!("{}:{}", c.level, c.root_cause)),
                r.decision.as_str().to_string(),
                r.policy_calls.to_string(),
                r.agent_calls.to_string(),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }
}

impl Timing {
    pub fn to_csv(&self) -> String {
        let mut w = csv_writer();
        w.write_record(["scenario", "alert_id", "wall_ms"]).expect("in-memory write");
        for (s, a, ms) in &self.per_alert {
            w.write_record([s.to_string(), a.clone(), format!("{ms:.3}")]).expect("in-memory write");
        }
        w.write_record(["total", "", &format!("{:.3}", self.total_ms)]).expect("in-memory write");
        w.write_record(["seconds_per_query", "", &format!("{:.6}", self.seconds_per_query)])
            .expect("in-memory write");
        finish(w)
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

impl Benchmark {
    /// Writes `report.txt`, `report.csv`, `records.csv` and `timing.csv`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), self.report.to_text())?;
        fs::write(dir.join("report.csv"), self.report.to_csv())?;
        fs::write(dir.join("records.csv"), self.report.records_csv())?;
        fs::write(dir.join("timing.csv"), self.timing.to_csv())?;
        Ok(())
    }

    /// Writes every alert's transcript under `transcripts/scenario-NNN/` and
    /// every memory as `memory/scenario-NNN.jsonl`.
    pub fn write_artifacts(&self, dir: &Path) -> std::io::Result<()> {
        for (i, windows) in self.windows.iter().enumerate() {
            let tdir = dir.join("transcripts").join(format!("scenario-{i:03}"));
            fs::create_dir_all(&tdir)?;
            for a in windows.iter().flat_map(|w| &w.alerts) {
                fs::write(tdir.join(format!("{}.json", a.alert_id)), StoredAnalysis::new(a, self.weights).to_json())?;
            }
        }
        let mdir = dir.join("memory");
        for (i, m) in self.memories.iter().enumerate() {
            if let Some(m) = m {
                fs::create_dir_all(&mdir)?;
                fs::write(mdir.join(format!("scenario-{i:03}.jsonl")), m.to_jsonl())?;
            }
        }
        Ok(())
    }
}

/// Analyzes every alert window of every scenario.
///
/// With memory on, each scenario gets its own memory, carried across its
/// windows; with memory off every decision is fresh. A scenario whose data
/// fails to load, or an alert that fails to analyze, is listed under
/// `failures` and left out of the aggregates.
pub fn run_benchmark<P: Policy + ?Sized>(
    corpus: &[Scenario],
    cfg: &AnalysisConfig,
    policy: &P,
    mode: MemoryMode,
    matching: Matching,
) -> Benchmark {
    let started = Instant::now();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut timing = Timing::default();
    let mut windows = Vec::new();
    let mut memories = Vec::new();
    for (i, scenario) in corpus.iter().enumerate() {
        let store = match scenario.store() {
            Ok(s) => s,
            Err(e) => {
                failures.push(Failure {
                    scenario: i,
                    alert_id: String::new(),
                    error: e.to_string(),
                });
                windows.push(Vec::new());
                memories.push(None);
                continue;
            }
        };
        let mut memory = (mode == MemoryMode::On).then(|| cfg.new_memory());
        let mut reports = Vec::new();
        for window in AlertWindow::detect(store.alerts(), cfg.window_ms) {
            let report = analyze_window(&window, &store, memory.as_mut(), policy, cfg);
            for a in &report.alerts {
                let mut r = EvalRecord::new(i, &a.alert_id, &scenario.truth, a.ranking.clone(), store.topology(), matching);
                r.decision = a.decision.kind;
                r.policy_calls = a.counters.policy;
                r.agent_calls = a.counters.agents();
                r.wall_ms = a.wall_ms.round() as u64;
                timing.per_alert.push((i, a.alert_id.clone(), a.wall_ms));
                records.push(r);
            }
            failures.extend(report.failed.iter().map(|f| Failure {
                scenario: i,
                alert_id: f.alert_id.clone(),
                error: f.error.clone(),
            }));
            reports.push(report);
        }
        windows.push(reports);
        memories.push(memory);
    }
    timing.total_ms = started.elapsed().as_secs_f64() * 1e3;
    if !timing.per_alert.is_empty() {
        timing.seconds_per_query = timing.per_alert.iter().map(|(_, _, ms)| ms).sum::<f64>() / 1e3 / timing.per_alert.len() as f64;
    }
    Benchmark {
        report: Report::build(mode, matching, corpus.len(), records, failures),
        timing,
        windows,
        memories,
        weights: cfg.consolidator(),
    }
}
