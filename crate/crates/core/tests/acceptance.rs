//! Acceptance criteria, one line each. Runs without the libtest harness so the
//! PASS/FAIL lines always show; exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rootcause::agents::{metric_agent, BASELINE_MS};
use rootcause::eval::{mrr, recall_at_k, run_benchmark, EvalRecord, Matching, MemoryMode};
use rootcause::graph::{
    divergence, embed, fingerprint, similarity, CausalGraph, EdgeAttributes, MetricStat, NodeAttributes, NodeKey,
    DEFAULT_DIM,
};
use rootcause::memory::{DecisionKind, Memory};
use rootcause::reasoner::{
    analyze_alert, analyze_window, initial_reasoning, recursive_rcl, AnalysisConfig, Budget, DeterministicPolicy,
    LatencyShim, StoredAnalysis,
};
use rootcause::scenario::{
    corpus_specs, duplicate_alert, duplicate_alerts, fixtures, generate, FaultKind, Jitter, Scenario, ScenarioSpec,
};
use rootcause::telemetry::{
    AlertWindow, Level, LogLevel, MetricSample, Millis, Span, TelemetryRecords, TelemetryStore, Topology,
};
use rootcause::transcript::{Stage, Verdict};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn policy() -> DeterministicPolicy {
    DeterministicPolicy::default()
}

// ---------------------------------------------------------------------------
// 1. The walker against an independent depth-first reference.

const FACTOR: f64 = 3.0;

fn med(mut v: Vec<u64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    })
}

struct Reference<'a> {
    spans: HashMap<&'a str, &'a Span>,
    children: HashMap<&'a str, Vec<&'a Span>>,
    records: &'a TelemetryRecords,
    evidence: bool,
    delta: Millis,
}

impl<'a> Reference<'a> {
    fn new(records: &'a TelemetryRecords, evidence: bool) -> Self {
        let spans: HashMap<&str, &Span> = records.spans.iter().map(|s| (s.span_id.as_str(), s)).collect();
        let mut children: HashMap<&str, Vec<&Span>> = HashMap::new();
        for s in &records.spans {
            if let Some(p) = &s.parent_span_id {
                children.entry(p.as_str()).or_default().push(s);
            }
        }
        for v in children.values_mut() {
            v.sort_by(|a, b| a.start_time.cmp(&b.start_time).then_with(|| a.span_id.cmp(&b.span_id)));
        }
        Self {
            spans,
            children,
            records,
            evidence,
            delta: 30_000,
        }
    }

    fn kids(&self, id: &str) -> &[&'a Span] {
        self.children.get(id).map_or(&[], Vec::as_slice)
    }

    fn suspect(&self, s: &Span) -> bool {
        let siblings = match &s.parent_span_id {
            Some(p) => self.kids(p).iter().filter(|c| c.span_id != s.span_id).map(|c| c.duration).collect(),
            None => Vec::new(),
        };
        s.status_code != 0 || med(siblings).is_some_and(|m| s.duration as f64 > FACTOR * m)
    }

    fn related(&self, pod: &str) -> Vec<String> {
        let t = &self.records.topology;
        let mut out = vec![pod.to_string()];
        out.extend(t.pod_to_service.get(pod).cloned());
        out.extend(t.pod_to_node.get(pod).cloned());
        out
    }

    /// An error log or an n-sigma breach on the pod, its service or its host.
    fn confirm(&self, s: &Span) -> bool {
        let t0 = s.start_time;
        let (lo, hi) = (t0 - self.delta, t0 + self.delta);
        let comps = self.related(&s.cmdb_id);
        let error_log = self.records.logs.iter().any(|l| {
            comps.contains(&l.component)
                && (lo..=hi).contains(&l.timestamp)
                && matches!(l.level, LogLevel::Error | LogLevel::Fatal)
        });
        if error_log {
            return true;
        }
        let mut series: BTreeMap<(&str, &str), Vec<&MetricSample>> = BTreeMap::new();
        for m in self.records.metrics.iter().filter(|m| comps.contains(&m.component)) {
            series.entry((&m.component, &m.metric)).or_default().push(m);
        }
        series.values().any(|pts| brute_n_sigma(pts, t0, self.delta, 3.0))
    }

    fn walk(&self, id: &str, depth: usize, seen: &mut BTreeSet<String>) {
        if !seen.insert(id.to_string()) {
            return;
        }
        let s = self.spans[id];
        let suspect = self.suspect(s);
        if suspect && self.evidence && self.confirm(s) {
            return;
        }
        let kids = self.kids(id);
        let m = med(kids.iter().map(|c| c.duration).collect());
        let mut next: Vec<&Span> = kids
            .iter()
            .copied()
            .filter(|c| c.status_code != 0 || m.is_some_and(|m| c.duration as f64 > FACTOR * m))
            .collect();
        next.sort_by(|a, b| b.duration.cmp(&a.duration).then_with(|| a.span_id.cmp(&b.span_id)));
        if next.is_empty() || depth + 1 >= Budget::default().max_depth {
            return;
        }
        for c in next {
            self.walk(&c.span_id, depth + 1, seen);
        }
    }
}

/// `|m(t) − μ| > n·max(σ, 1e-6)` over the tested window, with population
/// moments of the baseline; series with an empty baseline or window are
/// not tested.
fn brute_n_sigma(points: &[&MetricSample], t0: Millis, delta: Millis, n: f64) -> bool {
    let base: Vec<f64> = points
        .iter()
        .filter(|p| p.timestamp >= t0 - BASELINE_MS && p.timestamp < t0 - delta)
        .map(|p| p.value)
        .collect();
    let window: Vec<f64> = points
        .iter()
        .filter(|p| p.timestamp >= t0 - delta && p.timestamp <= t0 + delta)
        .map(|p| p.value)
        .collect();
    if base.is_empty() || window.is_empty() {
        return false;
    }
    let mu = base.iter().sum::<f64>() / base.len() as f64;
    let var = base.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / base.len() as f64;
    let sigma = var.sqrt().max(1e-6);
    window.iter().any(|v| (v - mu).abs() > n * sigma)
}

fn fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = AnalysisConfig::default();
    let mut walks = 0;
    for (i, spec) in corpus_specs(100, 9_000).into_iter().enumerate() {
        let layers = rng.gen_range(2..=4);
        let spec = ScenarioSpec {
            layers,
            services: layers + 3 + rng.gen_range(0..4),
            ..spec
        };
        let s = generate(&spec).map_err(|e| e.to_string())?;
        let store = s.store().map_err(|e| e.to_string())?;
        for alert in store.alerts() {
            for evidence in [false, true] {
                let agents = if evidence { cfg.agents(&store).full() } else { cfg.agents(&store).trace_only() };
                let stage = if evidence { Stage::Reflection } else { Stage::Initial };
                let f = recursive_rcl(&alert.entry_span_id, &policy(), agents, Budget::default(), stage)
                    .map_err(|e| e.to_string())?;
                let got: BTreeSet<String> = f.steps.iter().map(|s| s.span.clone()).collect();
                let mut want = BTreeSet::new();
                Reference::new(&s.records, evidence).walk(&alert.entry_span_id, 0, &mut want);
                ensure!(got == want, "scenario {i} alert {} evidence={evidence}: {got:?} != {want:?}", alert.alert_id);
                walks += 1;
            }
        }
    }
    Ok(format!("{walks} walks over 100 scenarios identical"))
}

// ---------------------------------------------------------------------------
// 2. Metric agent against a brute-force scan.

fn n_sigma_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t0: Millis = 10_000_000;
    let delta: Millis = 30_000;
    let mut series = 0;
    let mut flagged = 0;
    while series < 1000 {
        let metrics = rng.gen_range(1..=4).min(1000 - series);
        let n = [2.0, 3.0, 4.0][rng.gen_range(0..3)];
        let mut samples = Vec::new();
        for m in 0..metrics {
            let name = format!("m{m}");
            let mu: f64 = rng.gen_range(-50.0..50.0);
            let sd: f64 = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.01..10.0) };
            let base_len = rng.gen_range(0..60);
            for _ in 0..base_len {
                // some points before the baseline horizon, which must be ignored
                let t = t0 - rng.gen_range(delta + 1..=BASELINE_MS + 120_000);
                samples.push(MetricSample {
                    timestamp: t,
                    component: "p".into(),
                    metric: name.clone(),
                    value: mu + sd * rng.gen_range(-1.5..1.5),
                });
            }
            for _ in 0..rng.gen_range(1..8) {
                let t = t0 + rng.gen_range(-delta..=delta + 5_000);
                let z: f64 = rng.gen_range(-2.0 * n..2.0 * n);
                samples.push(MetricSample {
                    timestamp: t,
                    component: "p".into(),
                    metric: name.clone(),
                    value: mu + z * sd.max(1e-3),
                });
            }
            series += 1;
        }
        let mut topology = Topology::default();
        topology.insert("p", "svc", "node");
        let records = TelemetryRecords {
            metrics: samples,
            topology,
            ..Default::default()
        };
        let mut by_metric: BTreeMap<&str, Vec<&MetricSample>> = BTreeMap::new();
        for m in &records.metrics {
            by_metric.entry(&m.metric).or_default().push(m);
        }
        let want: BTreeSet<String> = by_metric
            .iter()
            .filter(|(_, pts)| brute_n_sigma(pts, t0, delta, n))
            .map(|(k, _)| k.to_string())
            .collect();
        let store = TelemetryStore::build(records.clone()).map_err(|e| e.to_string())?;
        let got: BTreeSet<String> = metric_agent(&store, t0, delta, "p", n, BASELINE_MS)
            .anomalies
            .into_iter()
            .map(|a| a.metric)
            .collect();
        ensure!(got == want, "n={n}: agent {got:?} vs brute force {want:?}");
        flagged += want.len();
    }
    Ok(format!("{series} series, {flagged} anomalous, sets identical"))
}

// ---------------------------------------------------------------------------
// 3. Fingerprint, embedding and similarity properties.

fn random_tree(rng: &mut ChaCha8Rng) -> (Vec<NodeAttributes>, Vec<(usize, usize, EdgeAttributes)>) {
    let n = rng.gen_range(1..=25);
    let nodes: Vec<NodeAttributes> = (0..n)
        .map(|i| {
            let svc = format!("svc{}", rng.gen_range(0..5));
            let mut a = NodeAttributes::new(&svc, format!("{svc}-{i}"), format!("Op{}", rng.gen_range(0..3)));
            for m in ["cpu", "mem", "latency_ms"] {
                if rng.gen_bool(0.7) {
                    a.metric_summary.insert(
                        m.into(),
                        MetricStat {
                            mean: rng.gen_range(0.0..100.0),
                            std: rng.gen_range(0.0..10.0),
                        },
                    );
                }
            }
            if rng.gen_bool(0.5) {
                a.log_summary.insert("INFO".into(), rng.gen_range(0..50));
            }
            if rng.gen_bool(0.2) {
                a.log_summary.insert("ERROR".into(), rng.gen_range(1..10));
            }
            a.spans.push(format!("s{i}"));
            a
        })
        .collect();
    let edges = (1..n)
        .map(|i| {
            let e = EdgeAttributes {
                call_latency: rng.gen_range(1..5_000),
                status_code: if rng.gen_bool(0.1) { 13 } else { 0 },
            };
            (rng.gen_range(0..i), i, e)
        })
        .collect();
    (nodes, edges)
}

fn assemble(nodes: &[NodeAttributes], edges: &[(usize, usize, EdgeAttributes)], order: &[usize], edge_order: &[usize]) -> CausalGraph {
    let mut g = CausalGraph::new("g", (0, 60_000));
    for &i in order {
        g.add_node(nodes[i].clone());
    }
    for &j in edge_order {
        let (a, b, e) = edges[j];
        g.add_edge(nodes[a].key(), nodes[b].key(), e).expect("tree edge");
    }
    g
}

fn graph_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut graphs = Vec::new();
    for _ in 0..1000 {
        let (nodes, edges) = random_tree(&mut rng);
        let identity: Vec<usize> = (0..nodes.len()).collect();
        let edge_identity: Vec<usize> = (0..edges.len()).collect();
        let mut order = identity.clone();
        order.shuffle(&mut rng);
        let mut edge_order = edge_identity.clone();
        edge_order.shuffle(&mut rng);
        let a = assemble(&nodes, &edges, &identity, &edge_identity);
        let b = assemble(&nodes, &edges, &order, &edge_order);
        ensure!(fingerprint(&a) == fingerprint(&b), "fingerprint depends on insertion order");
        ensure!(embed(&a, DEFAULT_DIM) == embed(&b, DEFAULT_DIM), "embedding depends on insertion order");
        ensure!(divergence(&a, &a, 1.0).is_empty(), "divergence(g, g) is not empty");
        graphs.push(a);
    }
    let mut worst_self: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for (i, g) in graphs.iter().enumerate() {
        let h = &graphs[(i * 7 + 1) % graphs.len()];
        for alpha in [0.0, 0.5, 1.0] {
            let s = similarity(g, h, alpha);
            ensure!((0.0..=1.0).contains(&s), "similarity {s} out of [0, 1]");
            worst_sym = worst_sym.max((s - similarity(h, g, alpha)).abs());
            worst_self = worst_self.max((similarity(g, g, alpha) - 1.0).abs());
        }
    }
    ensure!(worst_sym <= 1e-9, "asymmetry {worst_sym:e}");
    ensure!(worst_self <= 1e-9, "self-similarity off by {worst_self:e}");
    Ok(format!("1000 trees; max |s(a,b)-s(b,a)| = {worst_sym:.1e}, max |s(g,g)-1| = {worst_self:.1e}"))
}

// ---------------------------------------------------------------------------
// 4. Reuse of an identical alert.

fn small(seed: u64) -> Scenario {
    generate(&ScenarioSpec {
        layers: 2,
        services: 6,
        ..ScenarioSpec::new(FaultKind::LatencyInflation, Level::Pod, seed)
    })
    .expect("valid spec")
}

fn reuse() -> Outcome {
    let s = small(21);
    let store = s.store().map_err(|e| e.to_string())?;
    let cfg = AnalysisConfig::default();
    let alert = store.alerts()[0].clone();
    let mut memory = cfg.new_memory();
    let first = analyze_alert(&alert, &store, Some(&mut memory), &policy(), &cfg).map_err(|e| e.to_string())?;
    let again = analyze_alert(&alert, &store, Some(&mut memory), &policy(), &cfg).map_err(|e| e.to_string())?;
    ensure!(first.decision.kind == DecisionKind::Fresh, "first analysis was {:?}", first.decision.kind);
    ensure!(again.decision.kind == DecisionKind::Reuse, "repeat was {:?}", again.decision.kind);
    ensure!(again.counters.policy == 0, "repeat made {} policy calls", again.counters.policy);
    ensure!(again.ranking == first.ranking, "rankings differ");

    // a copy of the same trace under new ids
    let dup = duplicate_alerts(&s, 1, &Jitter::exact()).map_err(|e| e.to_string())?;
    let store = dup.store().map_err(|e| e.to_string())?;
    let copy = store.alert(&format!("{}-c0", alert.alert_id)).ok_or("copy missing")?;
    let c = analyze_alert(copy, &store, Some(&mut memory), &policy(), &cfg).map_err(|e| e.to_string())?;
    ensure!(c.decision.kind == DecisionKind::Reuse && c.counters.policy == 0, "copy: {:?}, {} calls", c.decision.kind, c.counters.policy);
    let key = |r: &rootcause::agents::RankedRootCauses| {
        r.candidates().iter().map(|c| (c.level, c.root_cause.clone(), c.score.to_bits())).collect::<Vec<_>>()
    };
    ensure!(key(&c.ranking) == key(&first.ranking), "copy ranking differs");
    Ok(format!("Reuse with 0 policy calls; {} candidates identical", first.ranking.len()))
}

// ---------------------------------------------------------------------------
// 5. Resume after perturbing one node.

/// A non-root pod serving exactly one span of the trace, unrelated to the fault.
fn target_of(s: &Scenario, trace_id: &str) -> Option<(String, String)> {
    let spans: Vec<&Span> = s.records.spans.iter().filter(|sp| sp.trace_id == trace_id).collect();
    let topo = &s.records.topology;
    let truth = &s.truth.component;
    spans
        .iter()
        .filter(|sp| sp.parent_span_id.is_some())
        .filter(|sp| spans.iter().filter(|o| o.cmdb_id == sp.cmdb_id).count() == 1)
        .find(|sp| {
            &sp.cmdb_id != truth
                && topo.pod_to_service.get(&sp.cmdb_id) != Some(truth)
                && topo.pod_to_node.get(&sp.cmdb_id) != Some(truth)
        })
        .map(|sp| (sp.cmdb_id.clone(), sp.operation.clone()))
}

fn resume() -> Outcome {
    let cfg = AnalysisConfig::default();
    let mut lines = Vec::new();
    for seed in 0..5 {
        let s = small(seed);
        let alert = s.records.alerts[0].clone();
        let (pod, op) = target_of(&s, &alert.trace_id).ok_or("no perturbable pod")?;
        let jitter = Jitter {
            target: Some(pod.clone()),
            ..Jitter::perturbed(3.0)
        };
        let dup = duplicate_alert(&s, &alert.alert_id, 1, &jitter).map_err(|e| e.to_string())?;
        let store = dup.store().map_err(|e| e.to_string())?;
        let copy = store.alert(&format!("{}-c0", alert.alert_id)).ok_or("copy missing")?.clone();
        let mut memory = cfg.new_memory();
        analyze_alert(&alert, &store, Some(&mut memory), &policy(), &cfg).map_err(|e| e.to_string())?;
        let resumed = analyze_alert(&copy, &store, Some(&mut memory), &policy(), &cfg).map_err(|e| e.to_string())?;
        let fresh = analyze_alert(&copy, &store, None, &policy(), &cfg).map_err(|e| e.to_string())?;
        let want = vec![NodeKey::new(&pod, &op).to_string()];
        ensure!(resumed.decision.kind == DecisionKind::Resume, "seed {seed}: {:?} at similarity {:.4}", resumed.decision.kind, resumed.decision.similarity);
        ensure!(resumed.decision.divergent == want, "seed {seed}: divergent {:?}, want {want:?}", resumed.decision.divergent);
        ensure!(
            resumed.counters.policy < fresh.counters.policy,
            "seed {seed}: resume {} calls vs fresh {}",
            resumed.counters.policy,
            fresh.counters.policy
        );
        lines.push(format!("{}<{}", resumed.counters.policy, fresh.counters.policy));
    }
    Ok(format!("5 seeds Resume on the perturbed node; policy calls {}", lines.join(", ")))
}

// ---------------------------------------------------------------------------
// 6. Depth assurance.

fn depth_of(store: &TelemetryStore, span: &str) -> usize {
    let mut d = 0;
    let mut cur = store.span(span).expect("span").clone();
    while let Some(p) = cur.parent_span_id.clone() {
        cur = store.span(&p).expect("parent").clone();
        d += 1;
    }
    d
}

fn depth_assurance() -> Outcome {
    let cfg = AnalysisConfig::default();
    let corpus: Vec<Scenario> = corpus_specs(50, 5_000)
        .into_iter()
        .map(|s| {
            generate(&ScenarioSpec {
                layers: 4,
                services: 10,
                min_fault_depth: 3,
                ..s
            })
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut initial_confirms = 0;
    for s in &corpus {
        let store = s.store().map_err(|e| e.to_string())?;
        for alert in store.alerts() {
            let f = initial_reasoning(&alert.entry_span_id, &policy(), cfg.agents(&store), cfg.budget).map_err(|e| e.to_string())?;
            initial_confirms += f.confirmed.len();
            initial_confirms += f.steps.iter().filter(|s| s.verdict == Verdict::ConfirmedRootCause).count();
        }
    }
    let bench = run_benchmark(&corpus, &cfg, &policy(), MemoryMode::Off, Matching::Exact);
    ensure!(bench.report.failures.is_empty(), "failures: {:?}", bench.report.failures);
    // every confirmation of the full pipeline sits at depth >= 3
    let mut shallow = 0;
    for (i, windows) in bench.windows.iter().enumerate() {
        let store = corpus[i].store().map_err(|e| e.to_string())?;
        for a in windows.iter().flat_map(|w| &w.alerts) {
            shallow += a.transcript.steps.iter().filter(|s| s.is_confirmed() && depth_of(&store, &s.span) < 3).count();
        }
    }
    let top5 = recall_at_k(&bench.report.records, 5).map_err(|e| e.to_string())?;
    ensure!(initial_confirms == 0, "initial reasoning confirmed {initial_confirms} spans");
    ensure!(shallow == 0, "{shallow} confirmations above depth 3");
    ensure!(top5 >= 0.90, "top-5 {top5:.3} < 0.90");
    Ok(format!("initial stage confirms 0; full pipeline top-5 = {top5:.3} over {} alerts", bench.report.records.len()))
}

// ---------------------------------------------------------------------------
// 7. Localization.

fn localization() -> Outcome {
    let corpus: Vec<Scenario> = corpus_specs(100, 1_000)
        .iter()
        .map(generate)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let kinds: BTreeSet<_> = corpus.iter().map(|s| s.truth.fault_kind).collect();
    ensure!(kinds.len() == FaultKind::ALL.len(), "corpus covers {} fault kinds", kinds.len());
    let b = run_benchmark(&corpus, &AnalysisConfig::default(), &policy(), MemoryMode::Off, Matching::Exact);
    ensure!(b.report.failures.is_empty(), "failures: {:?}", b.report.failures);
    let r1 = b.report.recall[&1];
    let r5 = b.report.recall[&5];
    let m = b.report.mrr;
    let line = format!("R@1 = {r1:.3}, R@5 = {r5:.3}, MRR = {m:.3} over {} alerts", b.report.records.len());
    ensure!(r1 >= 0.90 && r5 == 1.0 && m >= 0.93, "{line}");
    Ok(line)
}

// ---------------------------------------------------------------------------
// 8. Efficiency with memory.

fn efficiency() -> Outcome {
    let base = (0..50)
        .map(|seed| {
            generate(&ScenarioSpec {
                fault_traces: 5,
                ..ScenarioSpec::new(FaultKind::LatencyInflation, Level::Pod, 800 + seed)
            })
        })
        .find(|s| s.as_ref().is_ok_and(|s| s.records.alerts.len() == 5))
        .ok_or("no seed gives five alerts")?
        .map_err(|e| e.to_string())?;
    let mut s = base.clone();
    for a in &base.records.alerts {
        s = duplicate_alert(&s, &a.alert_id, 9, &Jitter::exact()).map_err(|e| e.to_string())?;
    }
    let store = s.store().map_err(|e| e.to_string())?;
    let alerts = store.alerts().to_vec();
    ensure!(alerts.len() == 50, "{} alerts", alerts.len());
    let start = alerts.iter().map(|a| a.timestamp).min().unwrap_or_default();
    let end = alerts.iter().map(|a| a.timestamp).max().unwrap_or_default();
    let window = AlertWindow::new(start, end, alerts).map_err(|e| e.to_string())?;
    let cfg = AnalysisConfig::default();
    let shim = LatencyShim::new(policy(), Duration::from_millis(50));

    let t = Instant::now();
    let off = analyze_window(&window, &store, None, &shim, &cfg);
    let off_time = t.elapsed();
    let mut memory = cfg.new_memory();
    let t = Instant::now();
    let on = analyze_window(&window, &store, Some(&mut memory), &shim, &cfg);
    let on_time = t.elapsed();

    let ratio = on.counters().policy as f64 / off.counters().policy as f64;
    let speedup = off_time.as_secs_f64() / on_time.as_secs_f64();
    let line = format!(
        "policy calls {} vs {} (ratio {ratio:.3}), wall {:.1}s vs {:.1}s (speedup {speedup:.1}x)",
        on.counters().policy,
        off.counters().policy,
        on_time.as_secs_f64(),
        off_time.as_secs_f64()
    );
    ensure!(ratio <= 0.25 && speedup >= 3.0, "{line}");
    Ok(line)
}

// ---------------------------------------------------------------------------
// 9. Metric arithmetic.

fn record(rank: Option<usize>) -> EvalRecord {
    EvalRecord {
        scenario: 0,
        alert_id: "a".into(),
        truth_level: Level::Service,
        truth_component: "x".into(),
        ranking: Default::default(),
        rank_of_truth: rank,
        decision: DecisionKind::Fresh,
        policy_calls: 0,
        agent_calls: 0,
        wall_ms: 0,
    }
}

fn arithmetic() -> Outcome {
    let a: Vec<_> = [Some(1), Some(2), None].into_iter().map(record).collect();
    let b: Vec<_> = [Some(1), Some(3), Some(7)].into_iter().map(record).collect();
    let m = mrr(&a);
    let r5 = recall_at_k(&b, 5).map_err(|e| e.to_string())?;
    ensure!(m == 0.5, "MRR {{1,2,miss}} = {m}");
    ensure!(r5 == 2.0 / 3.0, "Recall@5 {{1,3,7}} = {r5}");
    ensure!(mrr(&[record(Some(1))]) == 1.0, "single rank-1 record");
    ensure!(recall_at_k(&b, 0).is_err(), "k = 0 accepted");
    Ok("MRR {1,2,miss} = 0.5, Recall@5 {1,3,7} = 2/3".into())
}

// ---------------------------------------------------------------------------
// 10. Walk-through fixture.

fn walkthrough() -> Outcome {
    let s = fixtures::walkthrough();
    let store = s.store().map_err(|e| e.to_string())?;
    let cfg = AnalysisConfig::default();
    let windows = AlertWindow::detect(store.alerts(), cfg.window_ms);
    ensure!(windows.len() == 1, "{} windows", windows.len());
    let r = analyze_window(&windows[0], &store, None, &policy(), &cfg);
    let top = r.ranking.first().ok_or("empty ranking")?;
    ensure!(
        top.level == Level::Service && top.root_cause == "recommendationservice",
        "rank 1 is {} {}",
        top.level,
        top.root_cause
    );
    Ok(format!("rank 1: service recommendationservice (score {:.3})", top.score))
}

// ---------------------------------------------------------------------------
// 11. Determinism.

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).expect("readable file"));
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let corpus: Vec<Scenario> = corpus_specs(20, 300)
        .iter()
        .map(|spec| generate(spec).and_then(|s| duplicate_alerts(&s, 3, &Jitter::perturb_last(1, 3.0))))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = AnalysisConfig::default();
    for run in ["a", "b"] {
        let b = run_benchmark(&corpus, &cfg, &policy(), MemoryMode::On, Matching::Exact);
        let dir = root.path().join(run);
        b.write(&dir).map_err(|e| e.to_string())?;
        b.write_artifacts(&dir).map_err(|e| e.to_string())?;
        for (i, m) in b.memories.iter().enumerate() {
            if let Some(m) = m {
                m.persist(&dir.join(format!("persisted-{i:03}.jsonl"))).map_err(|e| e.to_string())?;
            }
        }
        // stored transcripts replay to the stored rankings
        for a in b.windows.iter().flatten().flat_map(|w| &w.alerts) {
            let stored = StoredAnalysis::new(a, b.weights);
            let back: StoredAnalysis = serde_json::from_str(&stored.to_json()).map_err(|e| e.to_string())?;
            ensure!(back.recompute() == a.ranking, "alert {} does not replay", a.alert_id);
        }
    }
    let mut a = files(&root.path().join("a"));
    let mut b = files(&root.path().join("b"));
    // wall-clock timings are the one non-deterministic output
    a.remove("timing.csv");
    b.remove("timing.csv");
    ensure!(a.keys().eq(b.keys()), "file sets differ");
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure!(differing.is_empty(), "differing files: {differing:?}");
    let memories = a.keys().filter(|k| k.starts_with("persisted-")).count();
    let reloaded = Memory::load(&root.path().join("a/persisted-000.jsonl")).map_err(|e| e.to_string())?;
    ensure!(!reloaded.is_empty(), "empty persisted memory");
    Ok(format!("{} files byte-identical across runs ({memories} persisted memories)", a.len()))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Outcome); 11] = [
        ("algorithm fidelity", 30, fidelity),
        ("n-sigma oracle", 10, n_sigma_oracle),
        ("fingerprint/similarity properties", 30, graph_properties),
        ("memory reuse contract", 5, reuse),
        ("resume precision", 10, resume),
        ("depth assurance", 60, depth_assurance),
        ("localization", 300, localization),
        ("efficiency", 120, efficiency),
        ("metric arithmetic", 1, arithmetic),
        ("walk-through fixture", 5, walkthrough),
        ("end-to-end determinism", 300, determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        let result = match result {
            Ok(detail) if secs > *limit as f64 => Err(format!("{detail}; over the {limit}s limit")),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:>2} {name:<34} {tag}  {detail} [{secs:.2}s / {limit}s]", i + 1);
        failed += result.is_err() as usize;
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
