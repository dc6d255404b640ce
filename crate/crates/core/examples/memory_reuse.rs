//! Reasoning memory: an exact repeat is answered from memory, a copy with one
//! perturbed pod resumes from that pod, and the memory survives a round trip
//! through disk.

use rootcause::memory::Memory;
use rootcause::reasoner::{analyze_alert, AnalysisConfig, DeterministicPolicy};
use rootcause::scenario::{duplicate_alerts, generate, FaultKind, Jitter, ScenarioSpec};
use rootcause::telemetry::Level;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec {
        layers: 2,
        services: 6,
        ..ScenarioSpec::new(FaultKind::LatencyInflation, Level::Pod, 2)
    };
    let base = generate(&spec)?;
    let first = base.records.alerts[0].alert_id.clone();
    // three copies of the first alert; the last one perturbed
    let s = duplicate_alerts(&base, 3, &Jitter::perturb_last(1, 3.0))?;
    let store = s.store()?;

    let cfg = AnalysisConfig::default();
    let policy = DeterministicPolicy::default();
    let mut memory = cfg.new_memory();
    for id in [first.clone(), format!("{first}-c0"), format!("{first}-c1"), format!("{first}-c2")] {
        let alert = store.alert(&id).expect("generated alert");
        let a = analyze_alert(alert, &store, Some(&mut memory), &policy, &cfg)?;
        println!(
            "{:<10} {:<6} similarity {:.4}  policy calls {:>2}  divergent {:?}  top {:?}",
            id,
            a.decision.kind.as_str(),
            a.decision.similarity,
            a.counters.policy,
            a.decision.divergent,
            a.ranking.top().map(|c| &c.root_cause)
        );
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("memory.jsonl");
    memory.persist(&path)?;
    let back = Memory::load(&path)?;
    println!("\npersisted {} entries to {}; reloaded {}", memory.len(), path.display(), back.len());
    print!("{}", std::fs::read_to_string(&path)?.lines().next().unwrap_or_default());
    println!();
    Ok(())
}
