//! Load a telemetry directory and list its alert windows.
//!
//!     cargo run --example ingest -- path/to/data
//!
//! Without an argument a synthetic scenario is written to a temp dir first.

use std::env;
use std::path::PathBuf;

use rootcause::scenario::{generate, FaultKind, ScenarioSpec};
use rootcause::telemetry::{ingest, AlertWindow, Level, SourceFormat, SourcePaths, DEFAULT_WINDOW_MS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let _tmp;
    let dir = match env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => {
            _tmp = tempfile::tempdir()?;
            let s = generate(&ScenarioSpec::new(FaultKind::LatencyInflation, Level::Pod, 3))?;
            s.write(_tmp.path())?;
            _tmp.path().to_path_buf()
        }
    };

    let (store, report) = ingest(&SourcePaths::from_dir(&dir), SourceFormat::GenericCsv)?;
    println!("{report:#?}");

    for w in AlertWindow::detect(store.alerts(), DEFAULT_WINDOW_MS) {
        println!("window [{}, {}]", w.start, w.end);
        for a in &w.alerts {
            let root = store.span(&a.entry_span_id)?;
            println!("  {} trace {} root {} {} ms status {}", a.alert_id, a.trace_id, root.cmdb_id, root.duration, root.status_code);
        }
    }
    Ok(())
}
