//! Driving the analysis with a language model.
//!
//! Offline by default: a stand-in model answers every prompt, the exchange is
//! recorded, and the recording is replayed. With `LLM_API_KEY` set and a
//! `--live` argument the configured endpoint is used instead.

use std::env;

use rootcause::llm::{LlmConfig, LlmPolicy, Mock, Recording, Replay, SessionLog};
use rootcause::reasoner::{analyze_alert, AnalysisConfig};
use rootcause::scenario::fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = fixtures::walkthrough().store()?;
    let alert = &store.alerts()[0];
    let cfg = AnalysisConfig::default();

    if env::args().any(|a| a == "--live") {
        let policy = LlmPolicy::from_config(LlmConfig::default())?;
        let a = analyze_alert(alert, &store, None, &policy, &cfg)?;
        print!("{}{}", a.transcript, a.ranking.to_csv());
        println!("{} fallbacks", policy.fallbacks());
        return Ok(());
    }

    // a model that suspects everything slow and trusts any metric anomaly
    let model = Mock::new(|req| {
        let prompt = &req.messages[1].content;
        let decision = if prompt.contains("one-sentence directive") {
            serde_json::json!("compare the span's duration with its siblings")
        } else if prompt.contains("choose the child spans") {
            let ids: Vec<&str> = prompt
                .lines()
                .filter_map(|l| {
                    let f: Vec<&str> = l.split_whitespace().collect();
                    (f.len() == 7 && f[5].parse::<u64>().is_ok_and(|d| d > 1_000)).then(|| f[1])
                })
                .collect();
            serde_json::json!(ids)
        } else if prompt.contains("confirms that the component") {
            serde_json::json!(!prompt.split("metric anomalies").nth(1).unwrap_or("").contains("(none)"))
        } else {
            serde_json::json!(prompt.contains("status 13") || prompt.contains("duration 10"))
        };
        Ok(serde_json::json!({"decision": decision, "rationale": "stand-in"}).to_string())
    });

    let dir = tempfile::tempdir()?;
    let log = dir.path().join("session.jsonl");
    let live = LlmPolicy::new(LlmConfig::default(), Recording::new(model, SessionLog::append_to(&log)?));
    let a = analyze_alert(alert, &store, None, &live, &cfg)?;
    println!("recorded {} exchanges, {} fallbacks", live.transport().inner.calls(), live.fallbacks());
    print!("{}", a.ranking.to_csv());

    let replay = LlmPolicy::new(LlmConfig::default(), Replay::load(&log)?);
    let b = analyze_alert(alert, &store, None, &replay, &cfg)?;
    println!("\nreplayed {} answers; same ranking: {}", replay.transport().served(), a.ranking == b.ranking);
    Ok(())
}
