use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::policy::{InstructionContext, Policy, SpanView};
use super::{Counters, ReasonerError};
use crate::agents::{consolidate, log_agent, metric_agent, trace_agent, ConsolidatorWeights, LogRelevance, RankedRootCauses};
use crate::graph::NodeKey;
use crate::telemetry::{Millis, TelemetryStore};
use crate::transcript::{Stage, Step, Transcript, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_depth: usize,
    pub max_steps: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_depth: 16,
            max_steps: 512,
        }
    }
}

/// The agents available to one stage, bound to a store.
#[derive(Debug, Clone, Copy)]
pub struct AgentSet<'a> {
    pub store: &'a TelemetryStore,
    pub relevance: &'a LogRelevance,
    pub n_sigma: f64,
    /// Half-width of the evidence window around a span's start.
    pub delta: Millis,
    pub baseline_ms: Millis,
    /// `false` withholds the log and metric agents.
    pub evidence: bool,
}

impl<'a> AgentSet<'a> {
    pub fn trace_only(self) -> Self {
        Self { evidence: false, ..self }
    }

    pub fn full(self) -> Self {
        Self { evidence: true, ..self }
    }
}

/// Steps of one stage plus its accounting.
#[derive(Debug, Clone, Default)]
pub struct Fragment {
    pub steps: Vec<Step>,
    /// Spans confirmed as root causes, in visit order.
    pub confirmed: Vec<String>,
    pub truncated: bool,
    pub counters: Counters,
}

impl Fragment {
    pub fn into_transcript(self, alert_id: &str) -> Transcript {
        let mut t = Transcript::new(alert_id);
        t.steps = self.steps;
        t.truncated = self.truncated;
        t.renumber();
        t
    }
}

struct Walker<'a, P: ?Sized> {
    policy: &'a P,
    agents: AgentSet<'a>,
    budget: Budget,
    stage: Stage,
    out: Fragment,
    visited: HashSet<String>,
}

impl<'a, P: Policy + ?Sized> Walker<'a, P> {
    fn new(policy: &'a P, agents: AgentSet<'a>, budget: Budget, stage: Stage) -> Self {
        Self {
            policy,
            agents,
            budget,
            stage,
            out: Fragment::default(),
            visited: HashSet::new(),
        }
    }

    fn visit(&mut self, span_id: &str, depth: usize, parent: Option<&str>) -> Result<(), ReasonerError> {
        if self.out.steps.len() >= self.budget.max_steps {
            self.out.truncated = true;
            return Ok(());
        }
        if !self.visited.insert(span_id.to_string()) {
            return Ok(());
        }
        let store = self.agents.store;
        let view = match SpanView::from_store(store, span_id) {
            Ok(v) => v,
            Err(e) => {
                let mut step = errored_step(self.stage, span_id, depth, e.to_string());
                step.index = self.out.steps.len();
                self.out.steps.push(step);
                return Ok(());
            }
        };
        let topology = store.topology();
        let mut step = Step {
            index: self.out.steps.len(),
            stage: self.stage,
            node: NodeKey::new(&view.pod, &view.operation),
            span: view.span_id.clone(),
            pod: view.pod.clone(),
            service: view.service.clone(),
            pod_service: topology.service_of(&view.pod).map(String::from),
            host: topology.node_of(&view.pod).map(String::from),
            operation: view.operation.clone(),
            start_time: view.start_time,
            duration: view.duration,
            status: view.status,
            depth,
            instruction: String::new(),
            trace_evidence: Vec::new(),
            log_evidence: None,
            metric_evidence: None,
            verdict: Verdict::Cleared,
            error: None,
            stale: false,
        };

        let ctx = InstructionContext {
            stage: self.stage,
            depth,
            parent: parent.map(String::from),
        };
        self.out.counters.policy += 1;
        step.instruction = self.policy.generate_instruction(&view, &ctx)?;

        self.out.counters.trace += 1;
        let trace = match trace_agent(store, span_id) {
            Ok(t) => t,
            Err(e) => {
                step.error = Some(e.to_string());
                self.out.steps.push(step);
                return Ok(());
            }
        };
        step.trace_evidence = trace.clone();

        self.out.counters.policy += 1;
        let suspect = self.policy.suspect(&view, &trace)?;
        if suspect && self.agents.evidence {
            let a = self.agents;
            self.out.counters.log += 1;
            let logs = log_agent(store, view.start_time, a.delta, &view.pod, a.relevance);
            self.out.counters.metric += 1;
            let metrics = metric_agent(store, view.start_time, a.delta, &view.pod, a.n_sigma, a.baseline_ms).anomalies;
            self.out.counters.policy += 1;
            let confirmed = self.policy.confirm(&view, &logs, &metrics)?;
            step.log_evidence = Some(logs);
            step.metric_evidence = Some(metrics);
            if confirmed {
                step.verdict = Verdict::ConfirmedRootCause;
                self.out.confirmed.push(view.span_id.clone());
                self.out.steps.push(step);
                return Ok(());
            }
        }

        let children = if trace.is_empty() {
            Vec::new()
        } else {
            self.out.counters.policy += 1;
            let picked = self.policy.suspicious_children(&view, &trace)?;
            // keep only genuine children, once each, in the policy's order
            let mut seen = HashSet::new();
            picked
                .into_iter()
                .filter(|c| trace.iter().any(|t| t.child_span == c.child_span) && seen.insert(c.child_span.clone()))
                .collect()
        };
        step.verdict = match (suspect, children.is_empty()) {
            (true, _) => Verdict::Suspect,
            (false, true) => Verdict::Cleared,
            (false, false) => Verdict::Expanded,
        };
        self.out.steps.push(step);

        if children.is_empty() {
            return Ok(());
        }
        if depth + 1 >= self.budget.max_depth {
            self.out.truncated = true;
            return Ok(());
        }
        for c in children {
            self.visit(&c.child_span, depth + 1, Some(span_id))?;
        }
        Ok(())
    }
}

fn errored_step(stage: Stage, span_id: &str, depth: usize, error: String) -> Step {
    Step {
        index: 0,
        stage,
        node: NodeKey::new("", ""),
        span: span_id.to_string(),
        pod: String::new(),
        service: String::new(),
        pod_service: None,
        host: None,
        operation: String::new(),
        start_time: 0,
        duration: 0,
        status: 0,
        depth,
        instruction: String::new(),
        trace_evidence: Vec::new(),
        log_evidence: None,
        metric_evidence: None,
        verdict: Verdict::Cleared,
        error: Some(error),
        stale: false,
    }
}

/// Depth-first recursive search from `span`: fetch the span's calls; if the
/// policy suspects it, gather logs and metrics and stop there on confirmation;
/// otherwise descend into the children the policy picks, in its order.
///
/// Every visit appends one step. Hitting `budget` marks the fragment
/// truncated; an agent failure marks the step errored and skips its subtree.
pub fn recursive_rcl<P: Policy + ?Sized>(
    span: &str,
    policy: &P,
    agents: AgentSet<'_>,
    budget: Budget,
    stage: Stage,
) -> Result<Fragment, ReasonerError> {
    let mut w = Walker::new(policy, agents, budget, stage);
    w.visit(span, 0, None)?;
    Ok(w.out)
}

/// First stage: trace evidence only, so nothing can be confirmed and every
/// suspicious span on the explored frontier stays `Suspect`.
pub fn initial_reasoning<P: Policy + ?Sized>(
    entry_span: &str,
    policy: &P,
    agents: AgentSet<'_>,
    budget: Budget,
) -> Result<Fragment, ReasonerError> {
    recursive_rcl(entry_span, policy, agents.trace_only(), budget, Stage::Initial)
}

/// Second stage: restarts the search from every given span with all agents.
/// A seed already visited by an earlier restart is not walked again.
pub fn reflect_from<P: Policy + ?Sized>(
    seeds: &[String],
    policy: &P,
    agents: AgentSet<'_>,
    budget: Budget,
) -> Result<Fragment, ReasonerError> {
    let mut w = Walker::new(policy, agents.full(), budget, Stage::Reflection);
    for s in seeds {
        w.visit(s, 0, None)?;
    }
    Ok(w.out)
}

/// Second stage over a first-stage transcript: every `Suspect` span is a seed.
pub fn critical_reflection<P: Policy + ?Sized>(
    gamma0: &[Step],
    policy: &P,
    agents: AgentSet<'_>,
    budget: Budget,
) -> Result<Fragment, ReasonerError> {
    let seeds: Vec<String> = gamma0
        .iter()
        .filter(|s| s.verdict == Verdict::Suspect && !s.stale)
        .map(|s| s.span.clone())
        .collect();
    reflect_from(&seeds, policy, agents, budget)
}

/// Third stage: consolidation over both stages, with no agent or policy use.
pub fn final_review(gamma0: &[Step], gamma1: &[Step], weights: &ConsolidatorWeights) -> RankedRootCauses {
    let mut all: Vec<Step> = gamma0.iter().chain(gamma1).cloned().collect();
    for (i, s) in all.iter_mut().enumerate() {
        s.index = i;
    }
    consolidate(&all, weights)
}
