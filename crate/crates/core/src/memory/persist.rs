//! Line-oriented on-disk format.
//!
//! The first line is a JSON manifest. Each following line is one entry:
//! `<sha256 of json, hex> <json>`, where the JSON holds the hex fingerprint,
//! the embedding, the graph's canonical text, the metadata and the transcript.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EntryMeta, Memory, MemoryEntry, MemoryError};
use crate::graph::{parse_canonical, Embedding, Fingerprint};
use crate::transcript::Transcript;

pub const MANIFEST_FORMAT: &str = "rootcause-memory";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dim: usize,
    alpha: f64,
    entries: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    fingerprint: String,
    embedding: Vec<f64>,
    graph: String,
    meta: EntryMeta,
    transcript: Transcript,
}

fn checksum(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

fn corrupt(line: usize, reason: impl Into<String>) -> MemoryError {
    MemoryError::Corrupt {
        line,
        reason: reason.into(),
    }
}

impl Memory {
    /// Serializes every entry in insertion order.
    pub fn to_jsonl(&self) -> String {
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: VERSION,
            dim: self.dim,
            alpha: self.alpha,
            entries: self.entries.len(),
        };
        let mut out = serde_json::to_string(&manifest).expect("manifest serializes");
        out.push('\n');
        for e in &self.entries {
            let record = Record {
                fingerprint: e.fingerprint.to_hex(),
                embedding: e.embedding.0.clone(),
                graph: e.graph.canonical_text(),
                meta: e.meta.clone(),
                transcript: e.transcript.clone(),
            };
            let body = serde_json::to_string(&record).expect("record serializes");
            out.push_str(&checksum(&body));
            out.push(' ');
            out.push_str(&body);
            out.push('\n');
        }
        out
    }

    /// Parses [`Memory::to_jsonl`] output, failing on the first damaged line.
    pub fn from_jsonl(text: &str) -> Result<Self, MemoryError> {
        let (manifest, lines) = read_manifest(text)?;
        let mut mem = Memory::new(manifest.dim, manifest.alpha);
        let mut found = 0;
        for (i, line) in lines {
            let entry = parse_record(i, line, true)?;
            entry.validate(mem.dim).map_err(|e| corrupt(i, e.to_string()))?;
            mem.insert_unchecked(entry);
            found += 1;
        }
        if found != manifest.entries {
            return Err(corrupt(
                found + 2,
                format!("manifest lists {} entries, found {found} (truncated file?)", manifest.entries),
            ));
        }
        Ok(mem)
    }

    pub fn persist(&self, path: &Path) -> Result<(), MemoryError> {
        fs::write(path, self.to_jsonl()).map_err(|source| MemoryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        Self::from_jsonl(&read(path)?)
    }

    /// Loads `path` if it exists, otherwise returns an empty memory.
    pub fn load_or_new(path: &Path, dim: usize, alpha: f64) -> Result<Self, MemoryError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new(dim, alpha))
        }
    }
}

fn read(path: &Path) -> Result<String, MemoryError> {
    fs::read_to_string(path).map_err(|source| MemoryError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_manifest(text: &str) -> Result<(Manifest, impl Iterator<Item = (usize, &str)>), MemoryError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| corrupt(1, "missing manifest"))?;
    let manifest: Manifest = serde_json::from_str(first).map_err(|e| corrupt(1, format!("manifest: {e}")))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != VERSION {
        return Err(corrupt(
            1,
            format!("unsupported format {} v{}", manifest.format, manifest.version),
        ));
    }
    Ok((manifest, lines.filter(|(_, l)| !l.is_empty())))
}

fn parse_record(line: usize, text: &str, check: bool) -> Result<MemoryEntry, MemoryError> {
    let (sum, body) = text
        .split_once(' ')
        .ok_or_else(|| corrupt(line, "expected `<checksum> <record>`"))?;
    if check && checksum(body) != sum {
        return Err(corrupt(line, "checksum mismatch"));
    }
    let record: Record = serde_json::from_str(body).map_err(|e| corrupt(line, format!("record: {e}")))?;
    let fingerprint =
        Fingerprint::from_hex(&record.fingerprint).ok_or_else(|| corrupt(line, "fingerprint is not 64 hex digits"))?;
    let graph = parse_canonical(&record.graph).map_err(|e| corrupt(line, format!("graph: {e}")))?;
    Ok(MemoryEntry {
        fingerprint,
        embedding: Embedding(record.embedding),
        graph,
        meta: record.meta,
        transcript: record.transcript,
    })
}

/// Re-checks every entry of a persisted memory and lists all violations
/// (checksum, parse, fingerprint, embedding and step resolution) instead of
/// stopping at the first. I/O failures and an unreadable manifest are errors.
pub fn verify_file(path: &Path) -> Result<Vec<String>, MemoryError> {
    let text = read(path)?;
    let (manifest, lines) = read_manifest(&text)?;
    let mut violations = Vec::new();
    let mut found = 0;
    for (i, line) in lines {
        found += 1;
        if let Some((sum, body)) = line.split_once(' ') {
            if checksum(body) != sum {
                violations.push(format!("line {i}: checksum mismatch"));
            }
        }
        match parse_record(i, line, false) {
            Ok(entry) => {
                if let Err(e) = entry.validate(manifest.dim) {
                    violations.push(format!("line {i}: {e}"));
                }
            }
            Err(e) => violations.push(e.to_string()),
        }
    }
    if found != manifest.entries {
        violations.push(format!("manifest lists {} entries, found {found}", manifest.entries));
    }
    Ok(violations)
}
