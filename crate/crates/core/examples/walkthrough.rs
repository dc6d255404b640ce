//! The full three-stage analysis of one alert: the slow frontend request whose
//! latency comes from the recommendation service.

use rootcause::reasoner::{analyze_alert, AnalysisConfig, DeterministicPolicy};
use rootcause::scenario::fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = fixtures::walkthrough();
    let store = s.store()?;
    let alert = &store.alerts()[0];

    let a = analyze_alert(alert, &store, None, &DeterministicPolicy::default(), &AnalysisConfig::default())?;
    print!("{}", a.transcript);
    println!("\n{} policy calls, {} agent calls", a.counters.policy, a.counters.agents());
    print!("\n{}", a.ranking.to_csv());
    println!("\ninjected fault: {} {}", s.truth.level, s.truth.component);
    Ok(())
}
