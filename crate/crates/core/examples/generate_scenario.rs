//! Synthetic fault scenarios: one of each fault kind, written to disk and read back.
//!
//!     cargo run --example generate_scenario -- out/dir

use std::env;
use std::path::PathBuf;

use rootcause::scenario::{generate, FaultKind, Scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let root = env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);

    for (i, kind) in FaultKind::ALL.into_iter().enumerate() {
        let spec = ScenarioSpec::new(kind, kind.default_level(), 100 + i as u64);
        let s = generate(&spec)?;
        let dir = root.join(kind.as_str());
        s.write(&dir)?;
        let (back, store) = Scenario::read(&dir)?;
        let r = store.report();
        println!(
            "{:<18} truth {:<7} {:<24} {:>4} spans {:>5} logs {:>6} samples {} alerts -> {}",
            kind.as_str(),
            back.truth.level,
            back.truth.component,
            r.spans,
            r.logs,
            r.metrics,
            r.alerts,
            dir.display()
        );
    }
    Ok(())
}
