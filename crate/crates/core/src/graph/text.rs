//! Canonical text serialization of causal graphs.
//!
//! ```text
//! causal-graph v1
//! alert   <alert_id>
//! window  <start> <end>
//! node    <pod> <op> <service>
//! span    <span_id>
//! metric  <name> <mean> <std>
//! log     <kind> <count>
//! edge    <from_pod> <from_op> <to_pod> <to_op> <latency> <status>
//! end
//! ```
//!
//! Fields are tab-separated; backslash, tab, CR and LF inside fields are
//! backslash-escaped. `span`/`metric`/`log` lines belong to the preceding
//! `node`. Nodes appear in identity-key order, edges in `(from, to)` order.

use std::fmt::Write as _;

use thiserror::Error;

use super::{CausalGraph, EdgeAttributes, MetricStat, NodeAttributes, NodeKey};

const MAGIC: &str = "causal-graph v1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("graph text line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

pub(super) fn write_canonical(g: &CausalGraph) -> String {
    let mut out = String::new();
    let mut line = |fields: &[String]| {
        out.push_str(&fields.join("\t"));
        out.push('\n');
    };
    line(&[MAGIC.to_string()]);
    line(&["alert".into(), escape(&g.alert_id)]);
    line(&["window".into(), g.window.0.to_string(), g.window.1.to_string()]);
    for (k, n) in &g.nodes {
        line(&["node".into(), escape(&k.pod), escape(&k.op), escape(&n.service)]);
        for s in &n.spans {
            line(&["span".into(), escape(s)]);
        }
        for (name, st) in &n.metric_summary {
            line(&["metric".into(), escape(name), st.mean.to_string(), st.std.to_string()]);
        }
        for (kind, c) in &n.log_summary {
            line(&["log".into(), escape(kind), c.to_string()]);
        }
    }
    for ((f, t), e) in &g.edges {
        let mut s = String::new();
        let _ = write!(s, "{}\t{}", e.call_latency, e.status_code);
        line(&[
            "edge".into(),
            escape(&f.pod),
            escape(&f.op),
            escape(&t.pod),
            escape(&t.op),
            s,
        ]);
    }
    line(&["end".into()]);
    out
}

fn current_node<'g>(
    graph: &'g mut CausalGraph,
    current: &Option<NodeKey>,
    line: usize,
) -> Result<&'g mut NodeAttributes, ParseError> {
    current
        .as_ref()
        .and_then(|k| graph.nodes.get_mut(k))
        .ok_or_else(|| ParseError {
            line,
            reason: "attribute line before any node".into(),
        })
}

/// Parses [`CausalGraph::canonical_text`] output.
pub fn parse_canonical(text: &str) -> Result<CausalGraph, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let err = |line: usize, reason: &str| ParseError {
        line,
        reason: reason.to_string(),
    };
    match lines.next() {
        Some((_, MAGIC)) => {}
        Some((n, _)) => return Err(err(n, "missing `causal-graph v1` header")),
        None => return Err(err(0, "empty input")),
    }
    let mut graph = CausalGraph::new("", (0, 0));
    let mut current: Option<NodeKey> = None;
    let mut ended = false;
    for (n, raw) in lines {
        if ended {
            return Err(err(n, "content after `end`"));
        }
        let fields: Vec<String> = raw
            .split('\t')
            .map(unescape)
            .collect::<Result<_, _>>()
            .map_err(|r| err(n, &r))?;
        let num = |i: usize| -> Result<&str, ParseError> {
            fields.get(i).map(String::as_str).ok_or_else(|| err(n, "missing field"))
        };
        let parse_f64 = |i: usize| -> Result<f64, ParseError> {
            num(i)?.parse::<f64>().map_err(|e| err(n, &e.to_string()))
        };
        let expect_len = |len: usize| -> Result<(), ParseError> {
            if fields.len() == len {
                Ok(())
            } else {
                Err(err(n, &format!("expected {len} fields, found {}", fields.len())))
            }
        };
        match fields[0].as_str() {
            "alert" => {
                expect_len(2)?;
                graph.alert_id = fields[1].clone();
            }
            "window" => {
                expect_len(3)?;
                let p = |i: usize| num(i)?.parse::<i64>().map_err(|e| err(n, &e.to_string()));
                graph.window = (p(1)?, p(2)?);
            }
            "node" => {
                expect_len(4)?;
                let key = graph.add_node(NodeAttributes::new(&fields[3], &fields[1], &fields[2]));
                current = Some(key);
            }
            "span" => {
                expect_len(2)?;
                current_node(&mut graph, &current, n)?.spans.push(fields[1].clone());
            }
            "metric" => {
                expect_len(4)?;
                let stat = MetricStat {
                    mean: parse_f64(2)?,
                    std: parse_f64(3)?,
                };
                current_node(&mut graph, &current, n)?
                    .metric_summary
                    .insert(fields[1].clone(), stat);
            }
            "log" => {
                expect_len(3)?;
                let c = num(2)?.parse::<u64>().map_err(|e| err(n, &e.to_string()))?;
                current_node(&mut graph, &current, n)?.log_summary.insert(fields[1].clone(), c);
            }
            "edge" => {
                expect_len(7)?;
                let attrs = EdgeAttributes {
                    call_latency: num(5)?.parse().map_err(|e: std::num::ParseIntError| err(n, &e.to_string()))?,
                    status_code: num(6)?.parse().map_err(|e: std::num::ParseIntError| err(n, &e.to_string()))?,
                };
                graph
                    .add_edge(NodeKey::new(&fields[1], &fields[2]), NodeKey::new(&fields[3], &fields[4]), attrs)
                    .map_err(|e| err(n, &e.to_string()))?;
            }
            "end" => {
                expect_len(1)?;
                ended = true;
            }
            other => return Err(err(n, &format!("unknown record `{other}`"))),
        }
    }
    if !ended {
        return Err(err(text.lines().count(), "missing `end`"));
    }
    Ok(graph)
}
