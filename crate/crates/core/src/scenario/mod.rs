//! Synthetic microservice scenarios with one injected fault each.
//!
//! A scenario is a layered call graph (services at layer `i` only call
//! services at layer `i + 1`, each span making three calls), a set of request
//! templates over it, background traces, stationary metric noise and routine
//! logs, and one fault whose symptoms and corroborating evidence sit at a
//! known component.

mod duplicate;
pub mod fixtures;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{
    export, ingest, Alert, Level, LogEntry, LogLevel, MetricSample, Millis, SourceFormat, SourcePaths, Span,
    TelemetryError, TelemetryRecords, TelemetryStore, Topology,
};

pub use duplicate::{duplicate_alert, duplicate_alerts, Jitter, REPLAY_SHIFT_MS};

/// Scenario clock origin (a multiple of the 10 s sampling period).
pub const EPOCH_MS: Millis = 1_700_000_000_000;
/// Metric sampling period.
pub const SAMPLE_MS: Millis = 10_000;
const FAULT_OFFSET_MS: Millis = 20 * 60_000;
const TAIL_MS: Millis = 5 * 60_000;
/// Metric shifts last this long from the fault start.
const SPIKE_MS: Millis = 60_000;
const FANOUT: usize = 3;
const OPS: [&str; 2] = ["Get", "List"];
const SERVICE_NAMES: [&str; 16] = [
    "frontend",
    "cartservice",
    "recommendationservice",
    "currencyservice",
    "productcatalogservice",
    "checkoutservice",
    "paymentservice",
    "shippingservice",
    "emailservice",
    "adservice",
    "userservice",
    "authservice",
    "orderservice",
    "inventoryservice",
    "searchservice",
    "reviewservice",
];
const POD_METRICS: [&str; 3] = ["cpu", "mem", "latency_ms"];
const SERVICE_METRICS: [&str; 3] = ["latency_ms", "error_rate", "qps"];
const NODE_METRICS: [&str; 3] = ["cpu", "mem", "disk_io"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    LatencyInflation,
    ErrorStatus,
    MetricSpike,
    LogBurst,
    NodeDegradation,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] = [
        Self::LatencyInflation,
        Self::ErrorStatus,
        Self::MetricSpike,
        Self::LogBurst,
        Self::NodeDegradation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LatencyInflation => "latency_inflation",
            Self::ErrorStatus => "error_status",
            Self::MetricSpike => "metric_spike",
            Self::LogBurst => "log_burst",
            Self::NodeDegradation => "node_degradation",
        }
    }

    pub fn supports(self, level: Level) -> bool {
        match self {
            Self::NodeDegradation => level == Level::Node,
            _ => level != Level::Node,
        }
    }

    /// The level used when none is requested.
    pub fn default_level(self) -> Level {
        match self {
            Self::NodeDegradation => Level::Node,
            _ => Level::Pod,
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown fault kind `{s}`"))
    }
}

/// Size and fault parameters of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub services: usize,
    pub pods_per_service: usize,
    pub nodes: usize,
    /// Call depth below the entry service.
    pub layers: usize,
    /// Distinct request shapes.
    pub templates: usize,
    /// Healthy traces before the fault.
    pub normal_traces: usize,
    /// Traces routed through the fault.
    pub fault_traces: usize,
    pub fault: FaultKind,
    pub level: Level,
    pub seed: u64,
    /// Shallowest call depth at which fault symptoms may appear.
    pub min_fault_depth: usize,
    pub latency_factor: f64,
    /// Metric shift in noise standard deviations.
    pub metric_shift: f64,
    pub log_burst: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            services: 8,
            pods_per_service: 2,
            nodes: 4,
            layers: 3,
            templates: 3,
            normal_traces: 20,
            fault_traces: 3,
            fault: FaultKind::LatencyInflation,
            level: Level::Pod,
            seed: 0,
            min_fault_depth: 1,
            latency_factor: 10.0,
            metric_shift: 6.0,
            log_burst: 50,
        }
    }
}

impl ScenarioSpec {
    pub fn new(fault: FaultKind, level: Level, seed: u64) -> Self {
        Self {
            fault,
            level,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::Spec(m));
        if self.services < 2 {
            return fail(format!("need at least 2 services, got {}", self.services));
        }
        if self.layers == 0 || self.services < self.layers + 1 {
            return fail(format!(
                "{} services cannot fill {} layers below the entry service",
                self.services, self.layers
            ));
        }
        if self.pods_per_service == 0 {
            return fail("pods_per_service must be at least 1".into());
        }
        if self.nodes < 2 {
            return fail(format!("need at least 2 nodes, got {}", self.nodes));
        }
        if self.fault_traces == 0 || self.templates == 0 {
            return fail("need at least one fault trace and one template".into());
        }
        if self.min_fault_depth == 0 || self.min_fault_depth > self.layers {
            return fail(format!("min_fault_depth must be within 1..={}", self.layers));
        }
        if !self.fault.supports(self.level) {
            return fail(format!("fault {} cannot be injected at {} level", self.fault, self.level));
        }
        if !(self.latency_factor > 1.0) || !(self.metric_shift > 0.0) {
            return fail("latency_factor must exceed 1 and metric_shift must be positive".into());
        }
        Ok(())
    }
}

/// Injected-fault label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub level: Level,
    pub component: String,
    pub fault_kind: FaultKind,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("{path}: {reason}")]
    Truth { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub records: TelemetryRecords,
    pub truth: Truth,
    pub fault_start: Millis,
}

pub const TRUTH_FILE: &str = "truth.csv";

impl Scenario {
    pub fn store(&self) -> Result<TelemetryStore, TelemetryError> {
        TelemetryStore::build(self.records.clone())
    }

    pub fn topology(&self) -> &Topology {
        &self.records.topology
    }

    /// Writes the five telemetry files plus `truth.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), ScenarioError> {
        export(&self.records, dir)?;
        let path = dir.join(TRUTH_FILE);
        let t = &self.truth;
        let body = format!(
            "level,component,fault_kind,seed\n{},{},{},{}\n",
            t.level, t.component, t.fault_kind, t.seed
        );
        fs::write(&path, body).map_err(|source| TelemetryError::Io { path, source })?;
        Ok(())
    }

    /// Reads a directory written by [`Scenario::write`]. The spec is not
    /// stored on disk; the returned scenario carries the default spec with
    /// the truth's kind, level and seed.
    pub fn read(dir: &Path) -> Result<(Self, TelemetryStore), ScenarioError> {
        let truth = read_truth(&dir.join(TRUTH_FILE))?;
        let (store, _) = ingest(&SourcePaths::from_dir(dir), SourceFormat::GenericCsv)?;
        let fault_start = store.alerts().iter().map(|a| a.timestamp).min().unwrap_or(0);
        let scenario = Scenario {
            spec: ScenarioSpec::new(truth.fault_kind, truth.level, truth.seed),
            records: store.to_records(),
            truth,
            fault_start,
        };
        Ok((scenario, store))
    }
}

pub fn read_truth(path: &Path) -> Result<Truth, ScenarioError> {
    let bad = |reason: String| ScenarioError::Truth {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("level,component,fault_kind,seed") {
        return Err(bad("expected header `level,component,fault_kind,seed`".into()));
    }
    let row = lines.next().ok_or_else(|| bad("missing truth row".into()))?;
    let f: Vec<&str> = row.trim().split(',').collect();
    if f.len() != 4 {
        return Err(bad(format!("expected 4 fields, got {}", f.len())));
    }
    Ok(Truth {
        level: f[0].parse().map_err(|e: String| bad(e))?,
        component: f[1].to_string(),
        fault_kind: f[2].parse().map_err(bad)?,
        seed: f[3].parse().map_err(|e| bad(format!("seed: {e}")))?,
    })
}

/// `n` specs cycling through the fault kinds, alternating pod and service
/// level for the kinds that allow both.
pub fn corpus_specs(n: usize, base_seed: u64) -> Vec<ScenarioSpec> {
    (0..n)
        .map(|i| {
            let fault = FaultKind::ALL[i % FaultKind::ALL.len()];
            let level = if fault == FaultKind::NodeDegradation {
                Level::Node
            } else if (i / FaultKind::ALL.len()) % 2 == 0 {
                Level::Pod
            } else {
                Level::Service
            };
            ScenarioSpec::new(fault, level, base_seed + i as u64)
        })
        .collect()
}

fn op_name(service: &str, verb: &str) -> String {
    let base = service.strip_suffix("service").unwrap_or(service);
    let mut cap: String = base[..1].to_uppercase();
    cap.push_str(&base[1..]);
    if base.len() != service.len() {
        cap.push_str("Service");
    }
    format!("{cap}/{verb}")
}

fn service_name(i: usize) -> String {
    SERVICE_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("service{i}"))
}

/// One node of a request template.
#[derive(Debug, Clone)]
struct TNode {
    service: usize,
    op: usize,
    parent: Option<usize>,
    layer: usize,
}

struct Layout {
    services: Vec<String>,
    layer_of: Vec<usize>,
    by_layer: Vec<Vec<usize>>,
    pods: Vec<Vec<String>>,
    topology: Topology,
}

impl Layout {
    fn ops(&self, s: usize) -> [String; 2] {
        [op_name(&self.services[s], OPS[0]), op_name(&self.services[s], OPS[1])]
    }
}

/// Truncated standard normal: redraws until `|z| <= 2`, keeping 3σ
/// excursions out of fault-free series even against a sampled baseline.
fn quiet_noise(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

struct Generator<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha8Rng,
}

/// Where the fault lives and which pods it touches.
struct FaultSite {
    truth: String,
    /// Service index whose spans may be affected.
    services: BTreeSet<usize>,
    /// Pods whose spans are affected.
    pods: BTreeSet<String>,
}

impl<'a> Generator<'a> {
    fn layout(&mut self, truth_node: Option<&str>) -> Layout {
        let spec = self.spec;
        let services: Vec<String> = (0..spec.services).map(service_name).collect();
        let layer_of: Vec<usize> = (0..spec.services).map(|i| if i == 0 { 0 } else { 1 + (i - 1) % spec.layers }).collect();
        let mut by_layer = vec![Vec::new(); spec.layers + 1];
        for (i, &l) in layer_of.iter().enumerate() {
            by_layer[l].push(i);
        }
        let pods: Vec<Vec<String>> = services
            .iter()
            .map(|s| (0..spec.pods_per_service).map(|k| format!("{s}-{k}")).collect())
            .collect();

        let mut topology = Topology::default();
        for p in &pods[0] {
            topology.insert(p.clone(), services[0].clone(), "node-0");
        }
        let worker_nodes: Vec<String> = (1..spec.nodes).map(|n| format!("node-{n}")).collect();
        let mut deep = Vec::new();
        let mut shallow = Vec::new();
        for s in 1..spec.services {
            for p in &pods[s] {
                if layer_of[s] >= spec.min_fault_depth {
                    deep.push((s, p.clone()));
                } else {
                    shallow.push((s, p.clone()));
                }
            }
        }
        deep.shuffle(&mut self.rng);
        shallow.shuffle(&mut self.rng);
        // a faulty node hosts exactly one pod deep enough to show the fault
        let mut others: Vec<String> = worker_nodes.iter().filter(|n| Some(n.as_str()) != truth_node).cloned().collect();
        if others.is_empty() {
            others.push("node-0".into());
        }
        let mut deep = deep.into_iter();
        if let Some(t) = truth_node {
            if let Some((s, p)) = deep.next() {
                topology.insert(p, services[s].clone(), t);
            }
        }
        for (i, (s, p)) in deep.enumerate() {
            topology.insert(p, services[s].clone(), others[i % others.len()].clone());
        }
        for (i, (s, p)) in shallow.into_iter().enumerate() {
            topology.insert(p, services[s].clone(), others[i % others.len()].clone());
        }
        Layout {
            services,
            layer_of,
            by_layer,
            pods,
            topology,
        }
    }

    fn template(&mut self, layout: &Layout) -> Vec<TNode> {
        let mut nodes = vec![TNode {
            service: 0,
            op: self.rng.gen_range(0..OPS.len()),
            parent: None,
            layer: 0,
        }];
        let mut i = 0;
        while i < nodes.len() {
            let layer = nodes[i].layer;
            if layer < self.spec.layers {
                for _ in 0..FANOUT {
                    let choices = &layout.by_layer[layer + 1];
                    nodes.push(TNode {
                        service: *choices.choose(&mut self.rng).expect("non-empty layer"),
                        op: self.rng.gen_range(0..OPS.len()),
                        parent: Some(i),
                        layer: layer + 1,
                    });
                }
            }
            i += 1;
        }
        nodes
    }

    /// Makes sure `template` contains one of `services` at a depth where the
    /// fault may show.
    fn force(&mut self, template: &mut [TNode], layout: &Layout, services: &BTreeSet<usize>) {
        let present = template
            .iter()
            .any(|n| services.contains(&n.service) && n.layer >= self.spec.min_fault_depth);
        if present {
            return;
        }
        let target = *services.iter().next().expect("fault site has a service");
        let layer = layout.layer_of[target];
        let slots: Vec<usize> = (0..template.len()).filter(|&i| template[i].layer == layer).collect();
        let slot = *slots.choose(&mut self.rng).expect("every layer is populated");
        template[slot].service = target;
    }
}

struct TraceBuild {
    spans: Vec<Span>,
    normal_root: u64,
}

/// Instantiates `template` at `start`. `pick` chooses the pod for a node;
/// `affected` marks spans whose own duration is inflated or status set.
#[allow(clippy::too_many_arguments)]
fn instantiate(
    rng: &mut ChaCha8Rng,
    layout: &Layout,
    template: &[TNode],
    trace_id: &str,
    start: Millis,
    pods: &[String],
    affected: &[bool],
    fault: Option<(FaultKind, f64)>,
) -> TraceBuild {
    let n = template.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, t) in template.iter().enumerate() {
        if let Some(p) = t.parent {
            children[p].push(i);
        }
    }
    let self_ms: Vec<u64> = (0..n)
        .map(|i| {
            if children[i].is_empty() {
                rng.gen_range(8..=12)
            } else {
                rng.gen_range(2..=4)
            }
        })
        .collect();
    let offsets: Vec<Millis> = (0..n).map(|_| rng.gen_range(1..=2)).collect();

    let mut normal = vec![0u64; n];
    let mut actual = vec![0u64; n];
    let mut status = vec![0i32; n];
    for i in (0..n).rev() {
        let max_child = |d: &[u64]| children[i].iter().map(|&c| d[c]).max().unwrap_or(0);
        normal[i] = self_ms[i] + max_child(&normal);
        actual[i] = self_ms[i] + max_child(&actual);
        if affected[i] {
            match fault {
                Some((FaultKind::ErrorStatus, _)) => status[i] = 13,
                Some((_, factor)) => actual[i] = (actual[i] as f64 * factor).round() as u64,
                None => {}
            }
        }
        if children[i].iter().any(|&c| status[c] != 0) {
            status[i] = 13;
        }
    }

    let mut starts = vec![start; n];
    for i in 1..n {
        let p = template[i].parent.expect("non-root has parent");
        starts[i] = starts[p] + offsets[i];
    }
    let spans = (0..n)
        .map(|i| {
            let t = &template[i];
            Span {
                trace_id: trace_id.to_string(),
                span_id: format!("{trace_id}-{i:02}"),
                parent_span_id: t.parent.map(|p| format!("{trace_id}-{p:02}")),
                cmdb_id: pods[i].clone(),
                service: layout.services[t.service].clone(),
                operation: layout.ops(t.service)[t.op].clone(),
                start_time: starts[i],
                duration: actual[i],
                status_code: status[i],
            }
        })
        .collect();
    TraceBuild {
        spans,
        normal_root: normal[0],
    }
}

/// Generates a scenario; the same spec always yields the same records.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let truth_node = (spec.level == Level::Node).then(|| format!("node-{}", g.rng.gen_range(1..spec.nodes)));
    let layout = g.layout(truth_node.as_deref());

    let site = match spec.level {
        Level::Node => {
            let node = truth_node.clone().expect("node truth chosen");
            let pods: BTreeSet<String> = layout.topology.pods_on_node(&node).map(String::from).collect();
            let services = (0..layout.services.len())
                .filter(|&s| layout.layer_of[s] >= spec.min_fault_depth && layout.pods[s].iter().any(|p| pods.contains(p)))
                .collect();
            FaultSite {
                truth: node,
                services,
                pods,
            }
        }
        level => {
            let eligible: Vec<usize> = (1..layout.services.len())
                .filter(|&s| layout.layer_of[s] >= spec.min_fault_depth)
                .collect();
            let s = *eligible.choose(&mut g.rng).expect("validated layers");
            let (truth, pods) = if level == Level::Pod {
                let p = layout.pods[s].choose(&mut g.rng).expect("pods").clone();
                (p.clone(), BTreeSet::from([p]))
            } else {
                (layout.services[s].clone(), layout.pods[s].iter().cloned().collect())
            };
            FaultSite {
                truth,
                services: BTreeSet::from([s]),
                pods,
            }
        }
    };

    let mut templates: Vec<Vec<TNode>> = (0..spec.templates).map(|_| g.template(&layout)).collect();
    for t in &mut templates {
        g.force(t, &layout, &site.services);
    }

    let fault_start = EPOCH_MS + FAULT_OFFSET_MS;
    let end = fault_start + TAIL_MS;
    let mut records = TelemetryRecords {
        topology: layout.topology.clone(),
        ..Default::default()
    };

    // healthy traffic before the fault
    let mut normal_starts: Vec<Millis> = (0..spec.normal_traces)
        .map(|_| g.rng.gen_range(EPOCH_MS + 60_000..fault_start - 60_000))
        .collect();
    normal_starts.sort_unstable();
    let mut trace_no = 0;
    for start in normal_starts {
        let tpl = &templates[g.rng.gen_range(0..templates.len())];
        let pods: Vec<String> = tpl
            .iter()
            .map(|n| layout.pods[n.service].choose(&mut g.rng).expect("pods").clone())
            .collect();
        let none = vec![false; tpl.len()];
        let t = instantiate(&mut g.rng, &layout, tpl, &format!("T{trace_no:05}"), start, &pods, &none, None);
        records.spans.extend(t.spans);
        trace_no += 1;
    }

    // traces through the fault, one alert each when the root degrades
    let mut alert_no = 0;
    for k in 0..spec.fault_traces {
        // the fault shows on exactly one call; every other call avoids the
        // faulty pods, swapping in a same-layer service when it must
        let mut tpl = templates[k % templates.len()].clone();
        let chosen = tpl
            .iter()
            .position(|n| n.layer >= spec.min_fault_depth && site.services.contains(&n.service))
            .expect("templates are forced through the fault");
        let healthy = |s: usize| -> Vec<&String> { layout.pods[s].iter().filter(|p| !site.pods.contains(*p)).collect() };
        let mut pods = Vec::with_capacity(tpl.len());
        for i in 0..tpl.len() {
            if i == chosen {
                let faulty: Vec<&String> = layout.pods[tpl[i].service].iter().filter(|p| site.pods.contains(*p)).collect();
                pods.push(faulty.choose(&mut g.rng).expect("fault site pod").to_string());
                continue;
            }
            if healthy(tpl[i].service).is_empty() {
                let alternatives: Vec<usize> = layout.by_layer[tpl[i].layer]
                    .iter()
                    .copied()
                    .filter(|&s| !healthy(s).is_empty())
                    .collect();
                if let Some(&s) = alternatives.choose(&mut g.rng) {
                    tpl[i].service = s;
                }
            }
            let options = healthy(tpl[i].service);
            let pod = match options.choose(&mut g.rng) {
                Some(p) => p.to_string(),
                None => layout.pods[tpl[i].service].choose(&mut g.rng).expect("pods").clone(),
            };
            pods.push(pod);
        }
        let tpl = &tpl;
        let affected: Vec<bool> = tpl
            .iter()
            .zip(&pods)
            .map(|(n, p)| n.layer >= spec.min_fault_depth && site.pods.contains(p))
            .collect();
        let start = fault_start + 5_000 + 10_000 * (k % 3) as Millis + g.rng.gen_range(0..500);
        let trace_id = format!("T{trace_no:05}");
        trace_no += 1;
        let t = instantiate(
            &mut g.rng,
            &layout,
            tpl,
            &trace_id,
            start,
            &pods,
            &affected,
            Some((spec.fault, spec.latency_factor)),
        );
        let root = &t.spans[0];
        let slow = root.duration as f64 > 2.0 * t.normal_root as f64;
        if slow || root.status_code != 0 {
            let description = if root.status_code != 0 {
                format!("{} returned status {}", root.operation, root.status_code)
            } else {
                format!("{} took {} ms (normally {} ms)", root.operation, root.duration, t.normal_root)
            };
            records.alerts.push(Alert {
                alert_id: format!("A{alert_no:04}"),
                timestamp: root.start_time,
                trace_id: trace_id.clone(),
                entry_span_id: root.span_id.clone(),
                description,
                binding: None,
            });
            alert_no += 1;
        }
        records.spans.extend(t.spans);
    }
    if records.alerts.is_empty() {
        return Err(ScenarioError::Spec("fault produced no alert".into()));
    }

    // the evidence channel each fault kind moves, at the truth component
    let evidence_component = site.truth.clone();
    let shifted: Option<(&str, &str)> = match (spec.fault, spec.level) {
        (FaultKind::LatencyInflation, _) => Some((&evidence_component, "latency_ms")),
        (FaultKind::ErrorStatus, Level::Service) => Some((&evidence_component, "error_rate")),
        (FaultKind::MetricSpike, Level::Pod) => Some((&evidence_component, "cpu")),
        (FaultKind::MetricSpike, _) => Some((&evidence_component, "qps")),
        (FaultKind::NodeDegradation, _) => Some((&evidence_component, "cpu")),
        _ => None,
    };

    let mut components: Vec<(String, &[&str])> = Vec::new();
    for (s, pods) in layout.pods.iter().enumerate() {
        for p in pods {
            components.push((p.clone(), &POD_METRICS));
        }
        components.push((layout.services[s].clone(), &SERVICE_METRICS));
    }
    for n in 0..spec.nodes {
        components.push((format!("node-{n}"), &NODE_METRICS));
    }
    let mut series: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for (c, metrics) in &components {
        for m in *metrics {
            let mean = round3(g.rng.gen_range(20.0..80.0));
            let sd = round3(g.rng.gen_range(1.0..5.0));
            series.insert((c.clone(), m.to_string()), (mean, sd));
        }
    }
    let mut t = EPOCH_MS;
    while t <= end {
        for ((c, m), (mean, sd)) in &series {
            let mut v = mean + sd * quiet_noise(&mut g.rng);
            if shifted == Some((c.as_str(), m.as_str())) && (fault_start..=fault_start + SPIKE_MS).contains(&t) {
                v += spec.metric_shift * sd;
            }
            records.metrics.push(MetricSample {
                timestamp: t,
                component: c.clone(),
                metric: m.clone(),
                value: round3(v),
            });
        }
        t += SAMPLE_MS;
    }

    // routine access logs, 2.5 s into every sampling period
    let mut t = EPOCH_MS + 2_500;
    while t <= end {
        for pods in &layout.pods {
            for p in pods {
                records.logs.push(LogEntry {
                    timestamp: t,
                    component: p.clone(),
                    level: LogLevel::Info,
                    kind: "access".into(),
                    message: "handled request".into(),
                });
            }
        }
        t += SAMPLE_MS;
    }
    let burst = match spec.fault {
        FaultKind::ErrorStatus => Some((20, "rpc_error", "grpc call failed with status 13")),
        FaultKind::LogBurst => Some((spec.log_burst, "exception", "unhandled exception in request handler")),
        _ => None,
    };
    if let Some((count, kind, message)) = burst {
        records.logs.extend(burst_logs(fault_start, count, &evidence_component, kind, message));
    }
    records.logs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.component.cmp(&b.component)));
    records.alerts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.alert_id.cmp(&b.alert_id)));

    Ok(Scenario {
        spec: spec.clone(),
        records,
        truth: Truth {
            level: spec.level,
            component: site.truth,
            fault_kind: spec.fault,
            seed: spec.seed,
        },
        fault_start,
    })
}

/// `count` ERROR lines spread over the first three sampling periods after
/// `from`, kept between 0.5 s and 3.5 s into each period.
fn burst_logs(from: Millis, count: usize, component: &str, kind: &str, message: &str) -> Vec<LogEntry> {
    let per_bucket = count.div_ceil(3).max(1) as Millis;
    let spacing = 3_000 / per_bucket;
    (0..count)
        .map(|j| {
            let bucket = (j % 3) as Millis;
            let slot = (j / 3) as Millis;
            LogEntry {
                timestamp: from + bucket * SAMPLE_MS + 500 + slot * spacing,
                component: component.to_string(),
                level: LogLevel::Error,
                kind: kind.to_string(),
                message: message.to_string(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{metric_agent, BASELINE_MS};

    #[test]
    fn same_seed_same_records() {
        let spec = ScenarioSpec::new(FaultKind::MetricSpike, Level::Pod, 7);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = ScenarioSpec { seed: 8, ..spec };
        assert_ne!(generate(&other).unwrap().records, generate(&ScenarioSpec { seed: 7, ..other.clone() }).unwrap().records);
    }

    #[test]
    fn every_spec_builds_a_valid_store() {
        for spec in corpus_specs(10, 100) {
            let s = generate(&spec).unwrap();
            let store = s.store().unwrap();
            assert!(!store.alerts().is_empty());
            assert!(s.topology().level_of(&s.truth.component) == Some(s.truth.level));
        }
    }

    #[test]
    fn mismatched_level_is_rejected() {
        let spec = ScenarioSpec::new(FaultKind::NodeDegradation, Level::Pod, 1);
        assert!(matches!(generate(&spec), Err(ScenarioError::Spec(_))));
        let spec = ScenarioSpec {
            services: 3,
            ..ScenarioSpec::new(FaultKind::LogBurst, Level::Pod, 1)
        };
        assert!(matches!(generate(&spec), Err(ScenarioError::Spec(_))));
    }

    #[test]
    fn metric_spike_is_visible_only_at_truth() {
        let s = generate(&ScenarioSpec::new(FaultKind::MetricSpike, Level::Pod, 3)).unwrap();
        let store = s.store().unwrap();
        let t0 = store.alerts()[0].timestamp;
        let hit = metric_agent(&store, t0, 30_000, &s.truth.component, 3.0, BASELINE_MS);
        assert!(!hit.anomalies.is_empty());
        let svc = s.topology().service_of(&s.truth.component).unwrap();
        for sibling in s.topology().pods_of_service(svc).filter(|p| *p != s.truth.component) {
            assert!(metric_agent(&store, t0, 30_000, sibling, 3.0, BASELINE_MS).anomalies.is_empty());
        }
    }

    #[test]
    fn op_names() {
        assert_eq!(op_name("cartservice", "Get"), "CartService/Get");
        assert_eq!(op_name("frontend", "List"), "Frontend/List");
    }
}
