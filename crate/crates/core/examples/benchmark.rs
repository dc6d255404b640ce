//! Recall@k and MRR over a generated corpus, with and without memory.
//!
//!     cargo run --release --example benchmark -- 50

use std::env;

use rootcause::eval::{run_benchmark, Matching, MemoryMode};
use rootcause::reasoner::{AnalysisConfig, DeterministicPolicy};
use rootcause::scenario::{corpus_specs, duplicate_alerts, generate, Jitter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = env::args().nth(1).map_or(Ok(20), |a| a.parse())?;
    // every scenario repeats its first alert three times, once perturbed
    let corpus = corpus_specs(n, 1_000)
        .iter()
        .map(|spec| generate(spec).and_then(|s| duplicate_alerts(&s, 3, &Jitter::perturb_last(1, 3.0))))
        .collect::<Result<Vec<_>, _>>()?;

    let cfg = AnalysisConfig::default();
    for mode in [MemoryMode::Off, MemoryMode::On] {
        let b = run_benchmark(&corpus, &cfg, &DeterministicPolicy::default(), mode, Matching::Exact);
        println!("{}", b.report.to_text());
        println!("seconds per query: {:.4}\n", b.timing.seconds_per_query);
    }
    Ok(())
}
