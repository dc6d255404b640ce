//! Plugging in a policy of one's own: here, one that only follows error
//! statuses and confirms on error logs alone.

use rootcause::agents::{ChildCall, MetricAnomaly};
use rootcause::reasoner::{analyze_alert, AnalysisConfig, InstructionContext, Policy, PolicyError, SpanView};
use rootcause::scenario::{generate, FaultKind, ScenarioSpec};
use rootcause::telemetry::{Level, LogEntry, LogLevel};

struct ErrorsOnly;

impl Policy for ErrorsOnly {
    fn name(&self) -> &str {
        "errors-only"
    }

    fn generate_instruction(&self, span: &SpanView, _ctx: &InstructionContext) -> Result<String, PolicyError> {
        Ok(format!("follow status {} on {}", span.status, span.pod))
    }

    fn suspect(&self, span: &SpanView, _trace: &[ChildCall]) -> Result<bool, PolicyError> {
        Ok(span.status != 0)
    }

    fn confirm(&self, _span: &SpanView, logs: &[LogEntry], _metrics: &[MetricAnomaly]) -> Result<bool, PolicyError> {
        Ok(logs.iter().any(|l| l.level == LogLevel::Error))
    }

    fn suspicious_children(&self, _span: &SpanView, trace: &[ChildCall]) -> Result<Vec<ChildCall>, PolicyError> {
        Ok(trace.iter().filter(|c| c.sigma != 0).cloned().collect())
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = generate(&ScenarioSpec::new(FaultKind::ErrorStatus, Level::Pod, 12))?;
    let store = s.store()?;
    let cfg = AnalysisConfig::default();
    for alert in store.alerts() {
        let a = analyze_alert(alert, &store, None, &ErrorsOnly, &cfg)?;
        let top = a.ranking.top().map(|c| format!("{} {}", c.level, c.root_cause));
        println!("{}: {} steps, top {:?}", alert.alert_id, a.transcript.len(), top);
    }
    println!("truth: {} {}", s.truth.level, s.truth.component);
    Ok(())
}
