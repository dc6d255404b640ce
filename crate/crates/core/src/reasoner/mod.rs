//! The recursive reasoning controller.
//!
//! A [`Policy`] makes the judgments (is this span suspicious, is it confirmed,
//! which children to follow); the controller walks the trace, calls the
//! agents and records every visit. Analysis runs in three stages: a
//! trace-only pass that marks the suspicious frontier, a reflection pass that
//! restarts from every suspect with logs and metrics, and a final
//! consolidation over both. [`analyze_alert`] adds memory reuse on top and
//! [`analyze_window`] runs a batch of alerts.

mod pipeline;
mod policy;
mod recursion;

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{ConsolidatorWeights, LogRelevance, BASELINE_MS};
use crate::graph::{GraphError, DEFAULT_DIM};
use crate::memory::{Memory, Thresholds, DEFAULT_ALPHA};
use crate::telemetry::{Millis, TelemetryError, DEFAULT_WINDOW_MS};

pub use pipeline::{
    aggregate, analyze_alert, analyze_window, AlertAnalysis, DecisionSummary, FailedAlert, StoredAnalysis, WindowCandidate,
    WindowReport,
};
pub use policy::{median, DeterministicPolicy, InstructionContext, LatencyShim, Policy, PolicyError, SpanView};
pub use recursion::{
    critical_reflection, final_review, initial_reasoning, recursive_rcl, reflect_from, AgentSet, Budget, Fragment,
};

/// Policy invocations and agent calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub policy: usize,
    pub trace: usize,
    pub log: usize,
    pub metric: usize,
}

impl Counters {
    pub fn agents(&self) -> usize {
        self.trace + self.log + self.metric
    }
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.policy += o.policy;
        self.trace += o.trace;
        self.log += o.log;
        self.metric += o.metric;
    }
}

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Everything an analysis needs besides the data, policy and memory.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub window_ms: Millis,
    pub n_sigma: f64,
    pub baseline_ms: Millis,
    pub relevance: LogRelevance,
    pub weights: ConsolidatorWeights,
    pub thresholds: Thresholds,
    /// Structural weight of the similarity used by memories created for an
    /// analysis (an existing memory keeps its own).
    pub alpha: f64,
    pub embedding_dim: usize,
    pub budget: Budget,
    /// Alerts analyzed concurrently within a window.
    pub parallel: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_ms: DEFAULT_WINDOW_MS,
            n_sigma: 3.0,
            baseline_ms: BASELINE_MS,
            relevance: LogRelevance::default(),
            weights: ConsolidatorWeights::default(),
            thresholds: Thresholds::default(),
            alpha: DEFAULT_ALPHA,
            embedding_dim: DEFAULT_DIM,
            budget: Budget::default(),
            parallel: 1,
        }
    }
}

impl AnalysisConfig {
    pub fn agents<'a>(&'a self, store: &'a crate::telemetry::TelemetryStore) -> AgentSet<'a> {
        AgentSet {
            store,
            relevance: &self.relevance,
            n_sigma: self.n_sigma,
            delta: self.window_ms / 2,
            baseline_ms: self.baseline_ms,
            evidence: true,
        }
    }

    pub fn new_memory(&self) -> Memory {
        Memory::new(self.embedding_dim, self.alpha)
    }

    /// Consolidator weights with the configured n-sigma.
    pub fn consolidator(&self) -> ConsolidatorWeights {
        ConsolidatorWeights {
            n_sigma: self.n_sigma,
            ..self.weights
        }
    }
}

#[cfg(test)]
mod tests;
