//! Causal graphs of alerts: extraction, fingerprints, embeddings, similarity
//! and the nodes where two graphs diverge.

use rootcause::graph::{divergence, embed, extract, fingerprint, similarity, DEFAULT_DIM};
use rootcause::scenario::{duplicate_alerts, generate, FaultKind, Jitter, ScenarioSpec};
use rootcause::telemetry::{Level, DEFAULT_WINDOW_MS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec {
        layers: 2,
        services: 6,
        ..ScenarioSpec::new(FaultKind::LatencyInflation, Level::Pod, 4)
    };
    // the original alert plus a copy with one pod's metrics pushed 3 sigma
    let s = duplicate_alerts(&generate(&spec)?, 1, &Jitter::perturbed(3.0))?;
    let store = s.store()?;

    let graphs = store
        .alerts()
        .iter()
        .map(|a| extract(a, &store, DEFAULT_WINDOW_MS))
        .collect::<Result<Vec<_>, _>>()?;
    for g in &graphs {
        let e = embed(g, DEFAULT_DIM);
        println!("{}: {} nodes, {} edges, fingerprint {}", g.alert_id, g.nodes.len(), g.edges.len(), fingerprint(g));
        println!("  embedding[0..8] = {:.3?}", &e.0[..8]);
    }

    let (first, copy) = (&graphs[0], graphs.last().expect("copy"));
    println!("\n{}", first.canonical_text());
    println!("similarity({}, {}) = {:.4}", first.alert_id, copy.alert_id, similarity(copy, first, 0.5));
    println!("divergent nodes: {:?}", divergence(copy, first, 1.0));
    Ok(())
}
