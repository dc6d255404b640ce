//! Hand-built incidents with a known reasoning path.

use super::{FaultKind, Scenario, ScenarioSpec, Truth, EPOCH_MS, SAMPLE_MS};
use crate::telemetry::{Alert, Level, LogEntry, LogLevel, MetricSample, Millis, Span, TelemetryRecords};

/// Alert time of the walkthrough incident.
pub const WALKTHROUGH_T0: Millis = EPOCH_MS + 30 * 60_000;

struct Builder {
    r: TelemetryRecords,
    from: Millis,
    to: Millis,
}

impl Builder {
    fn new(t0: Millis) -> Self {
        Self {
            r: TelemetryRecords::default(),
            from: t0 - 20 * 60_000,
            to: t0 + 2 * 60_000,
        }
    }

    fn pod(&mut self, pod: &str, service: &str, node: &str) {
        self.r.topology.insert(pod, service, node);
    }

    #[allow(clippy::too_many_arguments)]
    fn span(&mut self, trace: &str, id: &str, parent: Option<&str>, pod: &str, service: &str, op: &str, start: Millis, duration: u64, status: i32) {
        self.r.spans.push(Span {
            trace_id: trace.into(),
            span_id: id.into(),
            parent_span_id: parent.map(String::from),
            cmdb_id: pod.into(),
            service: service.into(),
            operation: op.into(),
            start_time: start,
            duration,
            status_code: status,
        });
    }

    /// A series alternating `mean ± sd` (so its baseline deviation is exactly
    /// `sd`), raised to `mean + k·sd` on samples inside `spike`.
    fn series(&mut self, component: &str, metric: &str, mean: f64, sd: f64, spike: Option<(Millis, Millis, f64)>) {
        let mut t = self.from;
        let mut i = 0;
        while t <= self.to {
            let value = match spike {
                Some((a, b, k)) if (a..=b).contains(&t) => mean + k * sd,
                _ if i % 2 == 0 => mean - sd,
                _ => mean + sd,
            };
            self.r.metrics.push(MetricSample {
                timestamp: t,
                component: component.into(),
                metric: metric.into(),
                value,
            });
            t += SAMPLE_MS;
            i += 1;
        }
    }

    fn logs(&mut self, component: &str, level: LogLevel, kind: &str, message: &str, at: Millis, count: usize) {
        for j in 0..count {
            self.r.logs.push(LogEntry {
                timestamp: at + 1_000 * j as Millis,
                component: component.into(),
                level,
                kind: kind.into(),
                message: message.into(),
            });
        }
    }

    fn alert(&mut self, id: &str, t: Millis, trace: &str, entry: &str, description: &str) {
        self.r.alerts.push(Alert {
            alert_id: id.into(),
            timestamp: t,
            trace_id: trace.into(),
            entry_span_id: entry.into(),
            description: description.into(),
            binding: None,
        });
    }

    fn finish(mut self, truth: Truth) -> Scenario {
        self.r.metrics.sort_by(|a, b| {
            (a.timestamp, &a.component, &a.metric).cmp(&(b.timestamp, &b.component, &b.metric))
        });
        self.r.logs.sort_by(|a, b| (a.timestamp, &a.component).cmp(&(b.timestamp, &b.component)));
        let fault_start = self.r.alerts.iter().map(|a| a.timestamp).min().unwrap_or(0);
        Scenario {
            spec: ScenarioSpec::new(truth.fault_kind, truth.level, truth.seed),
            records: self.r,
            truth,
            fault_start,
        }
    }
}

/// A slow product-recommendation request.
///
/// The frontend call fails after ~10 s. Its slow child is
/// `ListRecommendations` on `recommendationservice2-0`, which in turn waits
/// ~10 s on an outgoing catalog call while the catalog server answers in
/// 15 ms. The recommendation service shows a strong latency anomaly and
/// warnings, its pod a moderate CPU anomaly, and the frontend pod logs
/// errors. Expected outcome: `recommendationservice` ranked first, with the
/// frontend pod and the recommendation pod among the candidates.
pub fn walkthrough() -> Scenario {
    let t = WALKTHROUGH_T0;
    let mut b = Builder::new(t);
    b.pod("frontend2-0", "frontend", "node-1");
    b.pod("cartservice-0", "cartservice", "node-2");
    b.pod("recommendationservice2-0", "recommendationservice", "node-5");
    b.pod("checkoutservice2-0", "checkoutservice", "node-5");
    b.pod("currencyservice-0", "currencyservice", "node-3");
    b.pod("productcatalogservice-0", "productcatalogservice", "node-4");

    let tr = "walk";
    b.span(tr, "s0", None, "frontend2-0", "frontend", "hipstershop.Frontend/Home", t, 10_030, 13);
    b.span(tr, "s1", Some("s0"), "cartservice-0", "cartservice", "hipstershop.CartService/GetCart", t + 2, 12, 0);
    b.span(
        tr,
        "s2",
        Some("s0"),
        "recommendationservice2-0",
        "recommendationservice",
        "hipstershop.RecommendationService/ListRecommendations",
        t + 5,
        10_000,
        0,
    );
    b.span(tr, "s3", Some("s0"), "currencyservice-0", "currencyservice", "hipstershop.CurrencyService/Convert", t + 3, 8, 0);
    b.span(
        tr,
        "s4",
        Some("s2"),
        "recommendationservice2-0",
        "productcatalogservice",
        "hipstershop.ProductCatalogService/ListProducts",
        t + 7,
        9_990,
        0,
    );
    b.span(tr, "s5", Some("s2"), "recommendationservice2-0", "recommendationservice", "filter_products", t + 6, 3, 0);
    b.span(tr, "s6", Some("s2"), "recommendationservice2-0", "recommendationservice", "sample_products", t + 9_998, 2, 0);
    b.span(
        tr,
        "s7",
        Some("s4"),
        "productcatalogservice-0",
        "productcatalogservice",
        "hipstershop.ProductCatalogService/ListProducts",
        t + 9,
        15,
        0,
    );
    b.alert("walk-1", t, tr, "s0", "frontend request failed with status 13 after 10 s");

    let spike = Some((t, t + 30_000, 0.0));
    let with = |k: f64| spike.map(|(a, z, _)| (a, z, k));
    for (c, metrics) in [
        ("frontend2-0", &["cpu", "mem"][..]),
        ("cartservice-0", &["cpu", "mem"][..]),
        ("checkoutservice2-0", &["cpu", "mem"][..]),
        ("currencyservice-0", &["cpu", "mem"][..]),
        ("productcatalogservice-0", &["cpu", "mem"][..]),
        ("recommendationservice2-0", &["mem"][..]),
        ("frontend", &["latency_ms"][..]),
        ("productcatalogservice", &["latency_ms"][..]),
        ("node-1", &["cpu"][..]),
        ("node-5", &["cpu"][..]),
    ] {
        for m in metrics {
            b.series(c, m, 50.0, 2.0, None);
        }
    }
    b.series("recommendationservice2-0", "cpu", 40.0, 2.0, with(4.5));
    b.series("recommendationservice", "latency_ms", 120.0, 5.0, with(12.0));
    b.logs("frontend2-0", LogLevel::Error, "rpc_error", "failed to retrieve ads: context deadline exceeded", t + 10_000, 3);
    b.logs("recommendationservice", LogLevel::Warn, "slow_call", "ListProducts exceeded 5 s", t + 5_000, 4);
    b.logs("cartservice-0", LogLevel::Info, "access", "handled request", t, 2);

    b.finish(Truth {
        level: Level::Service,
        component: "recommendationservice".into(),
        fault_kind: FaultKind::LatencyInflation,
        seed: 0,
    })
}

/// Four alerts in one window.
///
/// Three order-placement requests through different checkout pods time out
/// in `EmailService/SendOrderConfirmation` on three different email pods,
/// while the email service's latency is far off baseline. A fourth, unrelated
/// request fails in `currencyservice-1`, which logs errors. Expected window
/// ranking: `emailservice` above `currencyservice-1`.
pub fn multi_alert() -> Scenario {
    let t = WALKTHROUGH_T0;
    let mut b = Builder::new(t);
    for k in 0..3 {
        b.pod(&format!("checkoutservice-{k}"), "checkoutservice", &format!("node-{}", k + 1));
        b.pod(&format!("emailservice-{k}"), "emailservice", &format!("node-{}", 3 - k));
    }
    b.pod("frontend-0", "frontend", "node-0");
    b.pod("frontend-1", "frontend", "node-0");
    b.pod("currencyservice-0", "currencyservice", "node-1");
    b.pod("currencyservice-1", "currencyservice", "node-2");
    b.pod("cartservice-0", "cartservice", "node-2");
    b.pod("paymentservice-0", "paymentservice", "node-3");
    b.pod("shippingservice-0", "shippingservice", "node-1");
    b.pod("productcatalogservice-0", "productcatalogservice", "node-3");

    for k in 0..3usize {
        let tr = format!("order{k}");
        let at = t + 10_000 * k as Millis;
        let id = |n: usize| format!("{tr}-{n}");
        let checkout = ["checkoutservice-0", "checkoutservice-1", "checkoutservice-0"][k];
        b.span(&tr, &id(0), None, "frontend-0", "frontend", "hipstershop.Frontend/PlaceOrder", at, 3_000, 0);
        b.span(&tr, &id(1), Some(&id(0)), checkout, "checkoutservice", "hipstershop.CheckoutService/PlaceOrder", at + 2, 2_990, 0);
        b.span(&tr, &id(2), Some(&id(0)), "currencyservice-0", "currencyservice", "hipstershop.CurrencyService/Convert", at + 1, 5, 0);
        b.span(&tr, &id(3), Some(&id(0)), "cartservice-0", "cartservice", "hipstershop.CartService/GetCart", at + 1, 6, 0);
        b.span(
            &tr,
            &id(4),
            Some(&id(1)),
            &format!("emailservice-{k}"),
            "emailservice",
            "hipstershop.EmailService/SendOrderConfirmation",
            at + 6,
            2_980,
            0,
        );
        b.span(&tr, &id(5), Some(&id(1)), "paymentservice-0", "paymentservice", "hipstershop.PaymentService/Charge", at + 3, 5, 0);
        b.span(&tr, &id(6), Some(&id(1)), "shippingservice-0", "shippingservice", "hipstershop.ShippingService/ShipOrder", at + 4, 4, 0);
        b.alert(&format!("order-{k}"), at, &tr, &id(0), "PlaceOrder latency above 2 s");
    }

    let at = t + 30_000;
    let tr = "quote";
    b.span(tr, "quote-0", None, "frontend-1", "frontend", "hipstershop.Frontend/GetQuote", at, 40, 13);
    b.span(tr, "quote-1", Some("quote-0"), "currencyservice-1", "currencyservice", "hipstershop.CurrencyService/Convert", at + 2, 30, 13);
    b.span(tr, "quote-2", Some("quote-0"), "productcatalogservice-0", "productcatalogservice", "hipstershop.ProductCatalogService/GetProduct", at + 1, 6, 0);
    b.alert("quote-0", at, tr, "quote-0", "GetQuote returned status 13");

    let pods = [
        "frontend-0",
        "frontend-1",
        "checkoutservice-0",
        "checkoutservice-1",
        "checkoutservice-2",
        "emailservice-0",
        "emailservice-1",
        "emailservice-2",
        "currencyservice-0",
        "currencyservice-1",
        "cartservice-0",
        "paymentservice-0",
        "shippingservice-0",
        "productcatalogservice-0",
    ];
    for p in pods {
        b.series(p, "cpu", 45.0, 3.0, None);
    }
    for s in ["checkoutservice", "currencyservice", "frontend"] {
        b.series(s, "latency_ms", 80.0, 4.0, None);
    }
    b.series("emailservice", "latency_ms", 60.0, 3.0, Some((t, t + 40_000, 12.0)));
    b.logs("currencyservice-1", LogLevel::Error, "exception", "conversion failed: rates unavailable", at + 500, 5);

    b.finish(Truth {
        level: Level::Service,
        component: "emailservice".into(),
        fault_kind: FaultKind::LatencyInflation,
        seed: 0,
    })
}
