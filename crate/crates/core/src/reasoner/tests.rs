use super::*;
use crate::graph::DEFAULT_DIM;
use crate::memory::{DecisionKind, Memory};
use crate::scenario::{duplicate_alerts, fixtures, generate, FaultKind, Jitter, ScenarioSpec};
use crate::telemetry::{AlertWindow, Level};
use crate::transcript::{Stage, Verdict};

fn pairs(r: &crate::agents::RankedRootCauses) -> Vec<(Level, String, String)> {
    r.candidates()
        .iter()
        .map(|c| (c.level, c.root_cause.clone(), format!("{:.9}", c.score)))
        .collect()
}

#[test]
fn walkthrough_ranks_the_recommendation_service_first() {
    let s = fixtures::walkthrough();
    let store = s.store().unwrap();
    let alert = store.alerts()[0].clone();
    let a = analyze_alert(&alert, &store, None, &DeterministicPolicy::default(), &AnalysisConfig::default()).unwrap();

    let top = a.ranking.top().unwrap();
    assert_eq!((top.level, top.root_cause.as_str()), (Level::Service, "recommendationservice"));
    assert!(a.ranking.rank_of(Level::Pod, "frontend2-0").is_some());
    assert!(a.ranking.rank_of(Level::Pod, "recommendationservice2-0").is_some());

    // the first stage follows s0 -> s2 -> s4 and stops at the fast catalog server
    let initial: Vec<_> = a.transcript.initial().iter().map(|s| (s.span.as_str(), s.verdict)).collect();
    assert_eq!(initial, [("s0", Verdict::Suspect), ("s2", Verdict::Suspect), ("s4", Verdict::Suspect)]);
    assert!(a.transcript.initial().iter().all(|s| s.metric_evidence.is_none() && s.log_evidence.is_none()));
    assert!(a.transcript.reflection().iter().all(|s| s.stage == Stage::Reflection));
}

#[test]
fn single_healthy_span_is_one_step() {
    let s = fixtures::walkthrough();
    let store = s.store().unwrap();
    let cfg = AnalysisConfig::default();
    let f = recursive_rcl("s7", &DeterministicPolicy::default(), cfg.agents(&store), Budget::default(), Stage::Initial).unwrap();
    assert_eq!(f.steps.len(), 1);
    assert_eq!(f.steps[0].verdict, Verdict::Cleared);
    // instruction + suspect; a leaf has no children to judge
    assert_eq!(f.counters.policy, 2);
    assert_eq!(f.counters.trace, 1);
}

#[test]
fn budget_truncates() {
    let s = fixtures::walkthrough();
    let store = s.store().unwrap();
    let cfg = AnalysisConfig::default();
    let budget = Budget { max_depth: 16, max_steps: 2 };
    let f = initial_reasoning("s0", &DeterministicPolicy::default(), cfg.agents(&store), budget).unwrap();
    assert_eq!(f.steps.len(), 2);
    assert!(f.truncated);
}

#[test]
fn unknown_span_is_an_errored_step() {
    let s = fixtures::walkthrough();
    let store = s.store().unwrap();
    let cfg = AnalysisConfig::default();
    let f = reflect_from(&["nope".into()], &DeterministicPolicy::default(), cfg.agents(&store), Budget::default()).unwrap();
    assert_eq!(f.steps.len(), 1);
    assert!(f.steps[0].error.is_some());
}

#[test]
fn window_aggregation_prefers_the_shared_cause() {
    let s = fixtures::multi_alert();
    let store = s.store().unwrap();
    let windows = AlertWindow::detect(store.alerts(), 60_000);
    assert_eq!(windows.len(), 1);
    let report = analyze_window(&windows[0], &store, None, &DeterministicPolicy::default(), &AnalysisConfig::default());
    assert!(report.failed.is_empty());
    assert_eq!(report.alerts.len(), 4);
    let email = report.rank_of(Level::Service, "emailservice").unwrap();
    let currency = report.rank_of(Level::Pod, "currencyservice-1").unwrap();
    assert_eq!(email, 1);
    assert!(email < currency);
    assert!((report.ranking[0].score - 3.0).abs() < 1e-12);
}

#[test]
fn aggregate_is_reciprocal_rank_sum() {
    let s = fixtures::multi_alert();
    let store = s.store().unwrap();
    let cfg = AnalysisConfig::default();
    let policy = DeterministicPolicy::default();
    let rankings: Vec<_> = store
        .alerts()
        .iter()
        .map(|a| analyze_alert(a, &store, None, &policy, &cfg).unwrap().ranking)
        .collect();
    let merged = aggregate(&rankings);
    for w in &merged {
        let expected: f64 = rankings
            .iter()
            .filter_map(|r| r.rank_of(w.level, &w.root_cause))
            .map(|k| 1.0 / k as f64)
            .sum();
        assert!((w.score - expected).abs() < 1e-12);
    }
}

fn small(seed: u64) -> crate::scenario::Scenario {
    generate(&ScenarioSpec {
        layers: 2,
        services: 6,
        ..ScenarioSpec::new(FaultKind::LatencyInflation, Level::Pod, seed)
    })
    .unwrap()
}

#[test]
fn exact_duplicate_is_reused_without_calls() {
    let base = small(11);
    let first = base.records.alerts[0].alert_id.clone();
    let s = duplicate_alerts(&base, 1, &Jitter::exact()).unwrap();
    let store = s.store().unwrap();
    let cfg = AnalysisConfig::default();
    let policy = DeterministicPolicy::default();
    let mut memory = Memory::new(DEFAULT_DIM, 0.5);

    let original = analyze_alert(store.alert(&first).unwrap(), &store, Some(&mut memory), &policy, &cfg).unwrap();
    assert!(original.saved);
    let copy = store.alert(&format!("{first}-c0")).unwrap();
    let again = analyze_alert(copy, &store, Some(&mut memory), &policy, &cfg).unwrap();
    assert_eq!(again.decision.kind, DecisionKind::Reuse);
    assert_eq!(again.counters, Counters::default());
    assert_eq!(pairs(&again.ranking), pairs(&original.ranking));
    // the stored transcript is rebound to the copy's spans
    assert!(again.transcript.steps.iter().all(|s| s.span.ends_with("-c0")));
}

#[test]
fn perturbed_duplicate_resumes_with_fewer_calls() {
    let base = small(11);
    let first = base.records.alerts[0].alert_id.clone();
    let s = duplicate_alerts(&base, 1, &Jitter::perturbed(3.0)).unwrap();
    let store = s.store().unwrap();
    let cfg = AnalysisConfig::default();
    let policy = DeterministicPolicy::default();
    let mut memory = Memory::new(DEFAULT_DIM, 0.5);

    let original = analyze_alert(store.alert(&first).unwrap(), &store, Some(&mut memory), &policy, &cfg).unwrap();
    let copy = store.alert(&format!("{first}-c0")).unwrap();
    let resumed = analyze_alert(copy, &store, Some(&mut memory), &policy, &cfg).unwrap();
    assert_eq!(resumed.decision.kind, DecisionKind::Resume);
    assert!(resumed.counters.policy < original.counters.policy, "{:?} vs {:?}", resumed.counters, original.counters);
    let fresh = analyze_alert(copy, &store, None, &policy, &cfg).unwrap();
    assert_eq!(resumed.ranking.top().map(|c| &c.root_cause), fresh.ranking.top().map(|c| &c.root_cause));
}

#[test]
fn parallel_batches_match_sequential_decisions() {
    let base = small(5);
    let s = duplicate_alerts(&base, 3, &Jitter::exact()).unwrap();
    let store = s.store().unwrap();
    let policy = DeterministicPolicy::default();
    let window = AlertWindow::new(0, i64::MAX, store.alerts().to_vec()).unwrap();
    let run = |parallel| {
        let cfg = AnalysisConfig { parallel, ..AnalysisConfig::default() };
        let mut memory = Memory::new(DEFAULT_DIM, 0.5);
        let r = analyze_window(&window, &store, Some(&mut memory), &policy, &cfg);
        (r, memory.len())
    };
    let (a, na) = run(2);
    let (b, nb) = run(2);
    assert_eq!(
        a.alerts.iter().map(|x| x.decision.kind).collect::<Vec<_>>(),
        b.alerts.iter().map(|x| x.decision.kind).collect::<Vec<_>>()
    );
    assert_eq!(na, nb);
    assert_eq!(a.ranking.len(), b.ranking.len());
}
