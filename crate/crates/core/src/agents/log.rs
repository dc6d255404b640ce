use regex::Regex;

use crate::telemetry::{LogEntry, LogLevel, Millis, TelemetryStore};

/// Relevance filter for log lines: a level allow-list or any message pattern.
#[derive(Debug, Clone)]
pub struct LogRelevance {
    pub levels: Vec<LogLevel>,
    pub patterns: Vec<Regex>,
}

impl Default for LogRelevance {
    fn default() -> Self {
        Self::new(
            vec![LogLevel::Warn, LogLevel::Error, LogLevel::Fatal],
            &[r"(?i)timeout", r"(?i)exception", r"(?i)refused", r"\b5\d\d\b"],
        )
        .expect("default patterns compile")
    }
}

impl LogRelevance {
    pub fn new(levels: Vec<LogLevel>, patterns: &[&str]) -> Result<Self, regex::Error> {
        Ok(Self {
            levels,
            patterns: patterns.iter().map(|p| Regex::new(p)).collect::<Result<_, _>>()?,
        })
    }

    pub fn is_relevant(&self, entry: &LogEntry) -> bool {
        self.levels.contains(&entry.level) || self.patterns.iter().any(|p| p.is_match(&entry.message))
    }
}

/// Relevant logs of `component` and its related entities in
/// `[t0 - delta, t0 + delta]`, ordered by time then component.
pub fn log_agent(
    store: &TelemetryStore,
    t0: Millis,
    delta: Millis,
    component: &str,
    relevance: &LogRelevance,
) -> Vec<LogEntry> {
    let mut out: Vec<&LogEntry> = store
        .topology()
        .related(component)
        .iter()
        .flat_map(|c| store.logs_between(c, t0 - delta, t0 + delta))
        .filter(|l| relevance.is_relevant(l))
        .collect();
    out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.component.cmp(&b.component)));
    out.into_iter().cloned().collect()
}
