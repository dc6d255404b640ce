use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::telemetry::{Level, Millis};
use crate::transcript::Step;

/// Weights of the three evidence channels in a candidate's score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsolidatorWeights {
    pub metric: f64,
    pub log: f64,
    pub status: f64,
    /// Sigma multiplier used by the metric agent; deviations saturate at `2n`.
    pub n_sigma: f64,
    /// Relevant log count at which the log channel saturates.
    pub log_saturation: f64,
}

impl Default for ConsolidatorWeights {
    fn default() -> Self {
        Self {
            metric: 1.0,
            log: 0.5,
            status: 0.5,
            n_sigma: 3.0,
            log_saturation: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub level: Level,
    pub root_cause: String,
    pub reason: String,
    /// Indices of the supporting transcript steps.
    pub evidence: Vec<usize>,
    pub score: f64,
    /// Earliest timestamp among the supporting evidence.
    pub first_evidence: Millis,
}

/// Candidates ordered best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedRootCauses(pub Vec<Candidate>);

impl RankedRootCauses {
    pub fn candidates(&self) -> &[Candidate] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based rank of a component at a level.
    pub fn rank_of(&self, level: Level, component: &str) -> Option<usize> {
        self.0
            .iter()
            .position(|c| c.level == level && c.root_cause == component)
            .map(|i| i + 1)
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.0.first()
    }

    /// `rank,level,root_cause,score,reason,evidence` rows, evidence ids
    /// separated by `;`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["rank", "level", "root_cause", "score", "reason", "evidence"])
            .expect("in-memory write");
        for (i, c) in self.0.iter().enumerate() {
            let evidence = c.evidence.iter().map(ToString::to_string).collect::<Vec<_>>().join(";");
            w.write_record([
                (i + 1).to_string(),
                c.level.to_string(),
                c.root_cause.clone(),
                format!("{:.6}", c.score),
                c.reason.clone(),
                evidence,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

#[derive(Default)]
struct Tally {
    score: f64,
    steps: Vec<usize>,
    reasons: Vec<String>,
    first: Option<Millis>,
}

/// Groups confirmed, non-stale steps by `(level, component)` and ranks them.
///
/// Each confirmed step supports its pod, the pod's service, the service named
/// on the span (when different) and the pod's host. For each of those, the
/// step contributes `w_metric·min(dev/2n, 1) + w_log·min(hits/sat, 1) +
/// w_status·error`, counting only evidence recorded against that component;
/// the status term applies to the pod alone. Ties go to the earliest evidence,
/// then to the lexicographically smaller component.
pub fn consolidate(steps: &[Step], weights: &ConsolidatorWeights) -> RankedRootCauses {
    let mut ordered: Vec<&Step> = steps.iter().filter(|s| s.is_confirmed()).collect();
    ordered.sort_by(|a, b| {
        (a.index, &a.span, a.stage as u8).cmp(&(b.index, &b.span, b.stage as u8))
    });

    let mut tallies: BTreeMap<(Level, String), Tally> = BTreeMap::new();
    for step in ordered {
        let mut targets: Vec<(Level, &str)> = vec![(Level::Pod, step.pod.as_str())];
        if let Some(svc) = &step.pod_service {
            targets.push((Level::Service, svc));
        }
        if step.pod_service.as_deref() != Some(step.service.as_str()) && !step.service.is_empty() {
            targets.push((Level::Service, &step.service));
        }
        if let Some(host) = &step.host {
            targets.push((Level::Node, host));
        }

        let metrics = step.metric_evidence.as_deref().unwrap_or(&[]);
        let logs = step.log_evidence.as_deref().unwrap_or(&[]);
        for (level, component) in targets {
            let deviation = metrics
                .iter()
                .filter(|a| a.component == component)
                .map(|a| a.max_deviation)
                .fold(0.0, f64::max);
            let hits = logs.iter().filter(|l| l.component == component).count();
            let error = level == Level::Pod && step.status != 0;

            let metric_norm = (deviation / (2.0 * weights.n_sigma)).min(1.0);
            let log_norm = (hits as f64 / weights.log_saturation).min(1.0);
            let contribution = weights.metric * metric_norm
                + weights.log * log_norm
                + if error { weights.status } else { 0.0 };

            let earliest = metrics
                .iter()
                .filter(|a| a.component == component)
                .map(|a| a.onset)
                .chain(logs.iter().filter(|l| l.component == component).map(|l| l.timestamp))
                .min()
                .unwrap_or(step.start_time);

            let mut reason = format!("step {} ({}:{})", step.index, step.pod, step.operation);
            if deviation > 0.0 {
                let names: Vec<&str> = metrics
                    .iter()
                    .filter(|a| a.component == component)
                    .map(|a| a.metric.as_str())
                    .collect();
                let _ = write!(reason, " metric {} at {:.1} sigma", names.join("/"), deviation);
            }
            if hits > 0 {
                let _ = write!(reason, " {hits} relevant log lines");
            }
            if error {
                let _ = write!(reason, " status {}", step.status);
            }
            if deviation == 0.0 && hits == 0 && !error {
                reason.push_str(" on the confirmed call path");
            }

            let tally = tallies.entry((level, component.to_string())).or_default();
            tally.score += contribution;
            if !tally.steps.contains(&step.index) {
                tally.steps.push(step.index);
            }
            tally.reasons.push(reason);
            tally.first = Some(tally.first.map_or(earliest, |f| f.min(earliest)));
        }
    }

    let mut candidates: Vec<Candidate> = tallies
        .into_iter()
        .map(|((level, root_cause), t)| Candidate {
            level,
            root_cause,
            reason: t.reasons.join("; "),
            evidence: t.steps,
            score: t.score,
            first_evidence: t.first.unwrap_or(0),
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.first_evidence.cmp(&b.first_evidence))
            .then_with(|| a.root_cause.cmp(&b.root_cause))
            .then_with(|| a.level.cmp(&b.level))
    });
    RankedRootCauses(candidates)
}
