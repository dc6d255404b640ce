use std::collections::{BTreeSet, HashMap};

use rootcause::agents::{metric_agent, BASELINE_MS};
use rootcause::scenario::{corpus_specs, generate, FaultKind, Scenario, ScenarioSpec};
use rootcause::telemetry::{Level, Span};

fn corpus(n: usize, seed: u64) -> Vec<Scenario> {
    corpus_specs(n, seed).iter().map(|s| generate(s).unwrap()).collect()
}

#[test]
fn error_status_marks_one_path_to_the_root() {
    let mut checked = 0;
    for seed in 0..20 {
        for level in [Level::Pod, Level::Service] {
            let s = generate(&ScenarioSpec::new(FaultKind::ErrorStatus, level, seed)).unwrap();
            let topo = &s.records.topology;
            let at_truth = |pod: &str| pod == s.truth.component || topo.service_of(pod) == Some(s.truth.component.as_str());
            let by_id: HashMap<&str, &Span> = s.records.spans.iter().map(|sp| (sp.span_id.as_str(), sp)).collect();
            let alerted: BTreeSet<&str> = s.records.alerts.iter().map(|a| a.trace_id.as_str()).collect();
            let mut traces: HashMap<&str, Vec<&Span>> = HashMap::new();
            for sp in &s.records.spans {
                traces.entry(sp.trace_id.as_str()).or_default().push(sp);
            }
            for (trace, spans) in traces {
                let errors: BTreeSet<&str> = spans.iter().filter(|sp| sp.status_code != 0).map(|sp| sp.span_id.as_str()).collect();
                if errors.is_empty() {
                    assert!(!alerted.contains(trace), "healthy trace {trace} raised an alert");
                    continue;
                }
                // the deepest error span runs at the fault, and the errors are exactly its ancestry
                let deepest = spans
                    .iter()
                    .filter(|sp| errors.contains(sp.span_id.as_str()))
                    .find(|sp| !spans.iter().any(|c| c.parent_span_id.as_deref() == Some(sp.span_id.as_str()) && c.status_code != 0))
                    .unwrap();
                assert!(at_truth(&deepest.cmdb_id), "seed {seed}: error starts at {}", deepest.cmdb_id);
                let mut path = BTreeSet::new();
                let mut cur = Some(*deepest);
                while let Some(sp) = cur {
                    path.insert(sp.span_id.as_str());
                    cur = sp.parent_span_id.as_deref().map(|p| by_id[p]);
                }
                assert_eq!(errors, path, "seed {seed} trace {trace}");
                assert!(alerted.contains(trace));
                checked += 1;
            }
        }
    }
    assert!(checked >= 40);
}

#[test]
fn baselines_are_quiet_before_the_fault() {
    for s in corpus(20, 600) {
        let store = s.store().unwrap();
        let topo = store.topology();
        let mut components: Vec<String> = topo.pod_to_service.keys().cloned().collect();
        components.extend(topo.services().into_iter().map(String::from));
        components.extend(topo.nodes().into_iter().map(String::from));
        for t in [s.fault_start - 3 * 60_000, s.fault_start - 60_000] {
            for c in &components {
                let scan = metric_agent(&store, t, 30_000, c, 3.0, BASELINE_MS);
                assert!(scan.anomalies.is_empty(), "{} {c} at {t}: {:?}", s.truth.fault_kind, scan.anomalies[0].metric);
            }
        }
    }
}

#[test]
fn metric_faults_stand_out_only_at_the_truth() {
    for s in corpus(30, 700) {
        if matches!(s.truth.fault_kind, FaultKind::LogBurst) {
            continue;
        }
        let store = s.store().unwrap();
        let t = s.fault_start + 20_000;
        let topo = store.topology();
        let mut components: Vec<String> = topo.services().into_iter().map(String::from).collect();
        components.extend(topo.nodes().into_iter().map(String::from));
        components.extend(topo.pod_to_service.keys().cloned());
        let flagged: BTreeSet<String> = components
            .iter()
            .flat_map(|c| {
                // scan the component alone
                metric_agent(&store, t, 30_000, c, 3.0, BASELINE_MS)
                    .anomalies
                    .into_iter()
                    .map(|a| a.component)
                    .filter(move |x| x == c)
            })
            .collect();
        if s.truth.fault_kind == FaultKind::ErrorStatus && s.truth.level == Level::Pod {
            // pod-level errors leave metrics alone
            assert!(flagged.is_empty(), "{flagged:?}");
        } else {
            assert_eq!(flagged, BTreeSet::from([s.truth.component.clone()]), "{}", s.truth.fault_kind);
        }
    }
}
