//! Attribute distances, combined graph similarity and divergence nodes.

use std::collections::{BTreeMap, BTreeSet};

use super::{embed, CausalGraph, Embedding, NodeAttributes, NodeKey, DEFAULT_DIM};

/// Floor applied to standard deviations before dividing.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Z-score deviation of `new` against the reference `old`.
///
/// Mean over shared metrics of `|μ_new − μ_old| / max(σ_old, ε)`, plus mean
/// over log kinds present in either node of `|c_new − c_old| / max(c_old, 1)`
/// (a kind missing from one side counts 0 there).
pub fn attribute_distance(new: &NodeAttributes, old: &NodeAttributes) -> f64 {
    let metric = mean(new.metric_summary.iter().filter_map(|(name, n)| {
        old.metric_summary
            .get(name)
            .map(|o| (n.mean - o.mean).abs() / o.std.max(SIGMA_FLOOR))
    }));
    let log = mean(log_kinds(new, old).map(|kind| {
        let (cn, co) = counts(new, old, kind);
        (cn - co).abs() / co.max(1.0)
    }));
    metric + log
}

/// Symmetric counterpart of [`attribute_distance`]: pooled standard
/// deviation `sqrt((σ_a² + σ_b²)/2)` for metrics and the mean count for logs.
pub fn symmetric_distance(a: &NodeAttributes, b: &NodeAttributes) -> f64 {
    let metric = mean(a.metric_summary.iter().filter_map(|(name, x)| {
        b.metric_summary.get(name).map(|y| {
            let pooled = ((x.std * x.std + y.std * y.std) / 2.0).sqrt();
            (x.mean - y.mean).abs() / pooled.max(SIGMA_FLOOR)
        })
    }));
    let log = mean(log_kinds(a, b).map(|kind| {
        let (ca, cb) = counts(a, b, kind);
        (ca - cb).abs() / ((ca + cb) / 2.0).max(1.0)
    }));
    metric + log
}

fn log_kinds<'a>(a: &'a NodeAttributes, b: &'a NodeAttributes) -> impl Iterator<Item = &'a str> {
    a.log_summary
        .keys()
        .chain(b.log_summary.keys())
        .map(String::as_str)
        .collect::<BTreeSet<_>>()
        .into_iter()
}

fn counts(a: &NodeAttributes, b: &NodeAttributes, kind: &str) -> (f64, f64) {
    let c = |n: &NodeAttributes| n.log_summary.get(kind).copied().unwrap_or(0) as f64;
    (c(a), c(b))
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `α·S_struct + (1−α)·S_attr` with default-dimension embeddings.
pub fn similarity(g_new: &CausalGraph, g_old: &CausalGraph, alpha: f64) -> f64 {
    similarity_with(
        g_new,
        &embed(g_new, DEFAULT_DIM),
        g_old,
        &embed(g_old, DEFAULT_DIM),
        alpha,
    )
}

/// Combined similarity with precomputed embeddings.
///
/// `S_struct = (cos + 1)/2`; `S_attr` averages `exp(−d)` over the union of
/// node keys, with unmatched nodes contributing 0.
pub fn similarity_with(a: &CausalGraph, ea: &Embedding, b: &CausalGraph, eb: &Embedding, alpha: f64) -> f64 {
    let s_struct = (ea.cosine(eb) + 1.0) / 2.0;
    let s_attr = attribute_agreement(a, b);
    (alpha * s_struct + (1.0 - alpha) * s_attr).clamp(0.0, 1.0)
}

fn attribute_agreement(a: &CausalGraph, b: &CausalGraph) -> f64 {
    let union: BTreeSet<&NodeKey> = a.nodes.keys().chain(b.nodes.keys()).collect();
    if union.is_empty() {
        return 1.0;
    }
    let matched: f64 = a
        .nodes
        .iter()
        .filter_map(|(k, x)| b.nodes.get(k).map(|y| (-symmetric_distance(x, y)).exp()))
        .sum();
    matched / union.len() as f64
}

/// Nodes of `g_new` that are unmatched in `g_old` or deviate by more than
/// `delta`.
pub fn divergence(g_new: &CausalGraph, g_old: &CausalGraph, delta: f64) -> BTreeSet<NodeKey> {
    g_new
        .nodes
        .iter()
        .filter(|(k, n)| match g_old.nodes.get(*k) {
            None => true,
            Some(o) => attribute_distance(n, o) > delta,
        })
        .map(|(k, _)| k.clone())
        .collect()
}

/// Per-node distances, for reporting.
pub fn distances(g_new: &CausalGraph, g_old: &CausalGraph) -> BTreeMap<NodeKey, Option<f64>> {
    g_new
        .nodes
        .iter()
        .map(|(k, n)| (k.clone(), g_old.nodes.get(k).map(|o| attribute_distance(n, o))))
        .collect()
}
