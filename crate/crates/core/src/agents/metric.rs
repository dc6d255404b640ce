use serde::{Deserialize, Serialize};

use crate::graph::{MetricStat, SIGMA_FLOOR};
use crate::telemetry::{Millis, TelemetryStore};

/// Default history used for the baseline mean and deviation: 15 minutes.
pub const BASELINE_MS: Millis = 15 * 60 * 1000;

/// A metric series that left its n-sigma band inside the inspected window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAnomaly {
    pub component: String,
    pub metric: String,
    /// Points in `[t0 - delta, t0 + delta]`.
    pub series: Vec<(Millis, f64)>,
    pub baseline: MetricStat,
    /// `max |m(t) − μ| / max(σ, ε)` over the window.
    pub max_deviation: f64,
    /// First timestamp breaching the band.
    pub onset: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedMetric {
    pub component: String,
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScan {
    pub anomalies: Vec<MetricAnomaly>,
    /// Metrics without enough history to test.
    pub skipped: Vec<SkippedMetric>,
}

/// Applies `|m(t) − μ| > n·σ` to every point of `window`, with `μ`, `σ` the
/// population moments of `baseline` and `σ` floored at [`SIGMA_FLOOR`].
/// Returns `None` when no point breaches the band or the baseline is empty.
pub fn n_sigma_check(
    component: &str,
    metric: &str,
    baseline: &[f64],
    window: Vec<(Millis, f64)>,
    n: f64,
) -> Option<MetricAnomaly> {
    let stat = MetricStat::of(baseline)?;
    let sigma = stat.std.max(SIGMA_FLOOR);
    let onset = window.iter().find(|(_, v)| (v - stat.mean).abs() > n * sigma)?.0;
    let max_deviation = window
        .iter()
        .map(|(_, v)| (v - stat.mean).abs() / sigma)
        .fold(0.0, f64::max);
    Some(MetricAnomaly {
        component: component.to_string(),
        metric: metric.to_string(),
        series: window,
        baseline: stat,
        max_deviation,
        onset,
    })
}

/// Scans every metric of `component` and its related entities (service and
/// host for a pod, pods for a service or node). The baseline for each series
/// is `[t0 − baseline_ms, t0 − delta)`; the tested window `[t0 − delta, t0 + delta]`.
pub fn metric_agent(
    store: &TelemetryStore,
    t0: Millis,
    delta: Millis,
    component: &str,
    n: f64,
    baseline_ms: Millis,
) -> MetricScan {
    let mut scan = MetricScan::default();
    for c in store.topology().related(component) {
        for metric in store.metric_names(&c) {
            let window = store.series_between(&c, metric, t0 - delta, t0 + delta);
            if window.is_empty() {
                continue;
            }
            let baseline: Vec<f64> = store
                .series_between(&c, metric, t0 - baseline_ms, t0 - delta - 1)
                .into_iter()
                .map(|(_, v)| v)
                .collect();
            if baseline.is_empty() {
                scan.skipped.push(SkippedMetric {
                    component: c.clone(),
                    metric: metric.to_string(),
                    reason: "empty baseline window".into(),
                });
                continue;
            }
            if let Some(a) = n_sigma_check(&c, metric, &baseline, window, n) {
                scan.anomalies.push(a);
            }
        }
    }
    scan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{MetricSample, TelemetryRecords, Topology};

    fn alternating(mean: f64, sigma: f64, len: usize) -> Vec<f64> {
        (0..len).map(|i| if i % 2 == 0 { mean - sigma } else { mean + sigma }).collect()
    }

    #[test]
    fn three_sigma_band_boundary() {
        let base = alternating(100.0, 5.0, 20);
        assert!(n_sigma_check("p", "cpu", &base, vec![(1, 116.0)], 3.0).is_some());
        assert!(n_sigma_check("p", "cpu", &base, vec![(1, 114.0)], 3.0).is_none());
        let a = n_sigma_check("p", "cpu", &base, vec![(1, 100.0), (2, 116.0), (3, 130.0)], 3.0).unwrap();
        assert_eq!(a.onset, 2);
        assert_eq!(a.max_deviation, 6.0);
    }

    #[test]
    fn constant_baseline_uses_floor() {
        let base = vec![42.0; 10];
        let a = n_sigma_check("p", "cpu", &base, vec![(1, 42.001)], 3.0).unwrap();
        assert!(a.max_deviation > 3.0);
        assert!(n_sigma_check("p", "cpu", &base, vec![(1, 42.0)], 3.0).is_none());
    }

    #[test]
    fn empty_baseline_is_recorded_as_skipped() {
        let mut topology = Topology::default();
        topology.insert("p", "s", "n");
        let store = TelemetryStore::build(TelemetryRecords {
            metrics: vec![MetricSample {
                timestamp: 1_000_000,
                component: "p".into(),
                metric: "cpu".into(),
                value: 1.0,
            }],
            topology,
            ..Default::default()
        })
        .unwrap();
        let scan = metric_agent(&store, 1_000_000, 30_000, "p", 3.0, BASELINE_MS);
        assert!(scan.anomalies.is_empty());
        assert_eq!(scan.skipped.len(), 1);
        assert_eq!(scan.skipped[0].metric, "cpu");
    }
}
