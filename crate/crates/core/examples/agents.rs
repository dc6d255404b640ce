//! The three evidence agents, called by hand on the walk-through fixture.

use rootcause::agents::{log_agent, metric_agent, trace_agent, LogRelevance, BASELINE_MS};
use rootcause::scenario::fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = fixtures::walkthrough().store()?;

    println!("calls made by s2:");
    for c in trace_agent(&store, "s2")? {
        println!("  {} {} {} {} ms status {}", c.child_span, c.pod, c.op, c.d, c.sigma);
    }

    let s4 = store.span("s4")?;
    let delta = 30_000;
    println!("\nrelevant logs around s4 ({}):", s4.cmdb_id);
    for l in log_agent(&store, s4.start_time, delta, &s4.cmdb_id, &LogRelevance::default()) {
        println!("  {} {} {} {}", l.timestamp, l.component, l.level, l.message);
    }

    println!("\nmetric anomalies around s4:");
    let scan = metric_agent(&store, s4.start_time, delta, &s4.cmdb_id, 3.0, BASELINE_MS);
    for a in &scan.anomalies {
        println!(
            "  {} {}: {:.1} sigma (baseline {:.2} ± {:.2}), onset {}",
            a.component, a.metric, a.max_deviation, a.baseline.mean, a.baseline.std, a.onset
        );
    }
    for s in &scan.skipped {
        println!("  skipped {} {}: {}", s.component, s.metric, s.reason);
    }
    Ok(())
}
