//! Weisfeiler-Lehman labeling, canonical fingerprints and feature-hashed
//! embeddings.
//!
//! Initial labels are `(service, operation)`; edges are unlabeled. Each round
//! relabels a node from its previous label plus the sorted labels of its
//! successors and predecessors. Labels are the first 8 bytes of a SHA-256
//! digest, so results are stable across platforms and runs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CausalGraph, NodeKey};

pub const WL_ROUNDS: usize = 3;
pub const DEFAULT_DIM: usize = 128;
/// Seed mixed into every feature before bucketing.
pub const EMBED_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// 256-bit canonical graph digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint(#[serde(with = "hex_bytes")] pub [u8; 32]);

impl Fingerprint {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into().map_err(|_| serde::de::Error::custom("fingerprint must be 32 bytes"))
    }
}

/// Fixed-length embedding, unit L2 norm unless all-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity. Two zero vectors count as identical, one zero
    /// vector as orthogonal.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        match (na == 0.0, nb == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
                (dot / (na * nb)).clamp(-1.0, 1.0)
            }
        }
    }
}

fn digest64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// Labels per round, `0..=WL_ROUNDS`, each keyed by node.
fn wl_rounds(g: &CausalGraph) -> Vec<BTreeMap<&NodeKey, u64>> {
    let mut succ: BTreeMap<&NodeKey, Vec<&NodeKey>> = BTreeMap::new();
    let mut pred: BTreeMap<&NodeKey, Vec<&NodeKey>> = BTreeMap::new();
    for (f, t) in g.edges.keys() {
        succ.entry(f).or_default().push(t);
        pred.entry(t).or_default().push(f);
    }
    let initial: BTreeMap<&NodeKey, u64> = g
        .nodes
        .iter()
        .map(|(k, a)| (k, digest64(&[b"wl0", a.service.as_bytes(), a.op.as_bytes()])))
        .collect();
    let mut rounds = vec![initial];
    for _ in 0..WL_ROUNDS {
        let prev = rounds.last().expect("at least one round");
        let next = g
            .nodes
            .keys()
            .map(|k| {
                let collect = |adj: &BTreeMap<&NodeKey, Vec<&NodeKey>>| -> Vec<u8> {
                    let mut labels: Vec<u64> = adj
                        .get(k)
                        .map(|ns| ns.iter().map(|n| prev[n]).collect())
                        .unwrap_or_default();
                    labels.sort_unstable();
                    labels.iter().flat_map(|l| l.to_be_bytes()).collect()
                };
                let own = prev[k].to_be_bytes();
                let label = digest64(&[b"wl", &own, &collect(&succ), &collect(&pred)]);
                (k, label)
            })
            .collect();
        rounds.push(next);
    }
    rounds
}

/// Multiset of WL subtree features over all rounds, as `(round, label)`.
pub fn wl_features(g: &CausalGraph) -> Vec<(usize, u64)> {
    let mut out: Vec<(usize, u64)> = wl_rounds(g)
        .iter()
        .enumerate()
        .flat_map(|(r, labels)| labels.values().map(move |&l| (r, l)))
        .collect();
    out.sort_unstable();
    out
}

/// Digest of the sorted multiset of final-round labels. The empty graph maps
/// to the SHA-256 of the empty string.
pub fn fingerprint(g: &CausalGraph) -> Fingerprint {
    let rounds = wl_rounds(g);
    let mut labels: Vec<u64> = rounds.last().map(|r| r.values().copied().collect()).unwrap_or_default();
    labels.sort_unstable();
    let mut h = Sha256::new();
    for l in labels {
        h.update(l.to_be_bytes());
    }
    Fingerprint(h.finalize().into())
}

/// Bucket a WL feature falls into for a given dimension.
pub fn feature_bucket(round: usize, label: u64, dim: usize) -> usize {
    let h = digest64(&[&EMBED_SEED.to_be_bytes(), &(round as u64).to_be_bytes(), &label.to_be_bytes()]);
    (h % dim as u64) as usize
}

/// Feature-hashed WL histogram, L2-normalized.
pub fn embed(g: &CausalGraph, dim: usize) -> Embedding {
    assert!(dim >= 8, "embedding dimension must be at least 8");
    let mut v = vec![0.0; dim];
    for (round, label) in wl_features(g) {
        v[feature_bucket(round, label, dim)] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Embedding(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeAttributes, NodeAttributes};

    const E: EdgeAttributes = EdgeAttributes {
        call_latency: 1,
        status_code: 0,
    };

    fn graph(nodes: &[&str], edges: &[(&str, &str)]) -> CausalGraph {
        let mut g = CausalGraph::new("a", (0, 1));
        for n in nodes {
            g.add_node(NodeAttributes::new(*n, format!("{n}-0"), "op"));
        }
        for (f, t) in edges {
            g.add_edge(NodeKey::new(format!("{f}-0"), "op"), NodeKey::new(format!("{t}-0"), "op"), E)
                .unwrap();
        }
        g
    }

    #[test]
    fn empty_graph_digest_is_sha256_of_nothing() {
        let g = CausalGraph::new("a", (0, 1));
        assert_eq!(
            fingerprint(&g).to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert!(embed(&g, 16).0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn path_and_star_differ_after_refinement() {
        // round 0: both graphs have labels {A, B, C}
        // round 1: path gives A(succ B), B(succ C, pred A), C(pred B);
        //          star gives A(succ B, C), B(pred A), C(pred A) -> differ
        let path = graph(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let star = graph(&["A", "B", "C"], &[("A", "B"), ("A", "C")]);
        let r0 = |g: &CausalGraph| {
            let mut v: Vec<u64> = wl_rounds(g)[0].values().copied().collect();
            v.sort();
            v
        };
        assert_eq!(r0(&path), r0(&star));
        assert_ne!(fingerprint(&path), fingerprint(&star));
    }

    #[test]
    fn embedding_has_unit_norm() {
        let g = graph(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let e = embed(&g, DEFAULT_DIM);
        assert_eq!(e.dim(), DEFAULT_DIM);
        assert!((e.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fingerprint_hex_round_trips() {
        let f = fingerprint(&graph(&["A"], &[]));
        assert_eq!(Fingerprint::from_hex(&f.to_hex()), Some(f));
        assert_eq!(Fingerprint::from_hex("zz"), None);
    }
}
