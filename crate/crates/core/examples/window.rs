//! A window of alerts sharing one cause, ranked jointly by reciprocal rank.

use rootcause::reasoner::{analyze_window, AnalysisConfig, DeterministicPolicy};
use rootcause::scenario::fixtures;
use rootcause::telemetry::AlertWindow;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = fixtures::multi_alert();
    let store = s.store()?;
    let cfg = AnalysisConfig::default();
    let mut memory = cfg.new_memory();

    for w in AlertWindow::detect(store.alerts(), cfg.window_ms) {
        let report = analyze_window(&w, &store, Some(&mut memory), &DeterministicPolicy::default(), &cfg);
        for a in &report.alerts {
            let top: Vec<_> = a.ranking.candidates().iter().take(3).map(|c| format!("{} {}", c.level, c.root_cause)).collect();
            println!("{:<8} {:<6} {}", a.alert_id, a.decision.kind.as_str(), top.join(", "));
        }
        print!("\n{}", report.ranking_csv());
    }
    println!("\ninjected fault: {} {}", s.truth.level, s.truth.component);
    Ok(())
}
