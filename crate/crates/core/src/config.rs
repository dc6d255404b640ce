//! Run configuration: a TOML file plus command-line overrides (flags win).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::ConsolidatorWeights;
use crate::graph::DEFAULT_DIM;
use crate::llm::LlmConfig;
use crate::memory::{Thresholds, DEFAULT_ALPHA, DEFAULT_DELTA, DEFAULT_TAU_PARTIAL, DEFAULT_TAU_SKIP};
use crate::reasoner::{AnalysisConfig, Budget};
use crate::telemetry::{Millis, DEFAULT_WINDOW_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Deterministic,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub window_ms: Millis,
    pub n_sigma: f64,
    pub alpha: f64,
    pub tau_skip: f64,
    pub tau_partial: f64,
    pub delta: f64,
    pub embedding_dim: usize,
    pub baseline_minutes: i64,
    pub parallel: usize,
    pub policy: PolicyKind,
    /// Multiplier over the median sibling/child duration used by the
    /// deterministic policy.
    pub timeout_factor: f64,
    pub memory_path: Option<PathBuf>,
    pub budget: Budget,
    pub weights: ConsolidatorWeights,
    pub llm: LlmConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            window_ms: DEFAULT_WINDOW_MS,
            n_sigma: 3.0,
            alpha: DEFAULT_ALPHA,
            tau_skip: DEFAULT_TAU_SKIP,
            tau_partial: DEFAULT_TAU_PARTIAL,
            delta: DEFAULT_DELTA,
            embedding_dim: DEFAULT_DIM,
            baseline_minutes: 15,
            parallel: 1,
            policy: PolicyKind::Deterministic,
            timeout_factor: 3.0,
            memory_path: None,
            budget: Budget::default(),
            weights: ConsolidatorWeights::default(),
            llm: LlmConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.window_ms <= 0 {
            return Err(format!("window_ms must be positive, got {}", self.window_ms));
        }
        if !(self.n_sigma > 0.0) {
            return Err(format!("n_sigma must be positive, got {}", self.n_sigma));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0 <= self.tau_partial && self.tau_partial <= self.tau_skip && self.tau_skip <= 1.0) {
            return Err(format!(
                "thresholds must satisfy 0 <= tau_partial <= tau_skip <= 1, got {} and {}",
                self.tau_partial, self.tau_skip
            ));
        }
        if !(self.delta >= 0.0) {
            return Err(format!("delta must be non-negative, got {}", self.delta));
        }
        if self.embedding_dim == 0 {
            return Err("embedding_dim must be positive".into());
        }
        if self.baseline_minutes <= 0 {
            return Err(format!("baseline_minutes must be positive, got {}", self.baseline_minutes));
        }
        if self.parallel == 0 {
            return Err("parallel must be at least 1".into());
        }
        if !(self.timeout_factor > 0.0) {
            return Err(format!("timeout_factor must be positive, got {}", self.timeout_factor));
        }
        if self.budget.max_depth == 0 || self.budget.max_steps == 0 {
            return Err("budget limits must be positive".into());
        }
        self.llm.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            tau_skip: self.tau_skip,
            tau_partial: self.tau_partial,
            delta: self.delta,
        }
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            window_ms: self.window_ms,
            n_sigma: self.n_sigma,
            baseline_ms: self.baseline_minutes * 60_000,
            weights: self.weights,
            thresholds: self.thresholds(),
            alpha: self.alpha,
            embedding_dim: self.embedding_dim,
            budget: self.budget,
            parallel: self.parallel,
            ..AnalysisConfig::default()
        }
    }
}
