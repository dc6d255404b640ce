//! Columnar CSV loading and export.
//!
//! The generic schema is one file per record type:
//!
//! | file            | header |
//! |-----------------|--------|
//! | `traces.csv`    | `trace_id,span_id,parent_span_id,cmdb_id,service,operation,start_time_ms,duration_ms,status_code` |
//! | `logs.csv`      | `timestamp_ms,cmdb_id,level,kind,message` |
//! | `metrics.csv`   | `timestamp_ms,cmdb_id,metric,value` |
//! | `alerts.csv`    | `alert_id,timestamp_ms,trace_id,entry_span_id,description` |
//! | `topology.csv`  | `cmdb_id,service,node` |
//!
//! Dataset-specific converters plug in as additional [`Loader`]s.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use csv::StringRecord;

use super::{
    Alert, LogEntry, LogLevel, MetricSample, Millis, Span, TelemetryError, TelemetryRecords, TelemetryStore,
    Topology, DEFAULT_WINDOW_MS,
};
use crate::telemetry::IngestReport;

pub const TRACES_HEADER: [&str; 9] = [
    "trace_id",
    "span_id",
    "parent_span_id",
    "cmdb_id",
    "service",
    "operation",
    "start_time_ms",
    "duration_ms",
    "status_code",
];
pub const LOGS_HEADER: [&str; 5] = ["timestamp_ms", "cmdb_id", "level", "kind", "message"];
pub const METRICS_HEADER: [&str; 4] = ["timestamp_ms", "cmdb_id", "metric", "value"];
pub const ALERTS_HEADER: [&str; 5] = ["alert_id", "timestamp_ms", "trace_id", "entry_span_id", "description"];
pub const TOPOLOGY_HEADER: [&str; 3] = ["cmdb_id", "service", "node"];

/// Source file locations. Absent files contribute zero records.
#[derive(Debug, Clone, Default)]
pub struct SourcePaths {
    pub traces: Option<PathBuf>,
    pub logs: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub alerts: Option<PathBuf>,
    pub topology: Option<PathBuf>,
}

impl SourcePaths {
    /// Picks up the standard file names that exist in `dir`.
    pub fn from_dir(dir: &Path) -> Self {
        let pick = |name: &str| {
            let p = dir.join(name);
            p.is_file().then_some(p)
        };
        Self {
            traces: pick("traces.csv"),
            logs: pick("logs.csv"),
            metrics: pick("metrics.csv"),
            alerts: pick("alerts.csv"),
            topology: pick("topology.csv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceFormat {
    #[default]
    GenericCsv,
}

/// Turns source files into plain records.
pub trait Loader {
    fn load(&self, paths: &SourcePaths) -> Result<TelemetryRecords, TelemetryError>;
}

/// Loader for the generic CSV schema.
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvLoader;

pub fn ingest(paths: &SourcePaths, format: SourceFormat) -> Result<(TelemetryStore, IngestReport), TelemetryError> {
    let records = match format {
        SourceFormat::GenericCsv => CsvLoader.load(paths)?,
    };
    let store = TelemetryStore::build_with_window(records, DEFAULT_WINDOW_MS)?;
    let report = store.report();
    Ok((store, report))
}

impl Loader for CsvLoader {
    fn load(&self, paths: &SourcePaths) -> Result<TelemetryRecords, TelemetryError> {
        let mut out = TelemetryRecords::default();
        if let Some(p) = &paths.topology {
            out.topology = read_topology(p)?;
        }
        if let Some(p) = &paths.traces {
            out.spans = read_rows(p, &TRACES_HEADER, |row| {
                Ok(Span {
                    trace_id: row.text(0)?,
                    span_id: row.text(1)?,
                    parent_span_id: row.optional(2),
                    cmdb_id: row.text(3)?,
                    service: row.any(4),
                    operation: row.any(5),
                    start_time: row.timestamp(6)?,
                    duration: row.duration(7)?,
                    status_code: row.int(8)?,
                })
            })?;
        }
        if let Some(p) = &paths.logs {
            out.logs = read_rows(p, &LOGS_HEADER, |row| {
                Ok(LogEntry {
                    timestamp: row.timestamp(0)?,
                    component: row.text(1)?,
                    level: row.parse_with(2, |s| s.parse::<LogLevel>())?,
                    kind: row.any(3),
                    message: row.any(4),
                })
            })?;
        }
        if let Some(p) = &paths.metrics {
            out.metrics = read_rows(p, &METRICS_HEADER, |row| {
                Ok(MetricSample {
                    timestamp: row.timestamp(0)?,
                    component: row.text(1)?,
                    metric: row.text(2)?,
                    value: row.parse_with(3, |s| {
                        s.parse::<f64>()
                            .map_err(|e| e.to_string())
                            .and_then(|v| if v.is_finite() { Ok(v) } else { Err("value must be finite".into()) })
                    })?,
                })
            })?;
        }
        if let Some(p) = &paths.alerts {
            out.alerts = read_rows(p, &ALERTS_HEADER, |row| {
                Ok(Alert {
                    alert_id: row.text(0)?,
                    timestamp: row.timestamp(1)?,
                    trace_id: row.any(2),
                    entry_span_id: row.any(3),
                    description: row.any(4),
                    binding: None,
                })
            })?;
        }
        Ok(out)
    }
}

fn read_topology(path: &Path) -> Result<Topology, TelemetryError> {
    let rows = read_rows(path, &TOPOLOGY_HEADER, |row| Ok((row.text(0)?, row.text(1)?, row.text(2)?)))?;
    let mut topology = Topology::default();
    for (pod, service, node) in rows {
        topology.insert(pod, service, node);
    }
    Ok(topology)
}

struct Row<'a> {
    file: &'a str,
    line: u64,
    header: &'a [&'a str],
    record: &'a StringRecord,
}

impl Row<'_> {
    fn err(&self, idx: usize, reason: impl Into<String>) -> TelemetryError {
        TelemetryError::Malformed {
            file: self.file.to_string(),
            line: self.line,
            field: self.header[idx].to_string(),
            reason: reason.into(),
        }
    }

    fn raw(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("")
    }

    fn any(&self, idx: usize) -> String {
        self.raw(idx).to_string()
    }

    fn text(&self, idx: usize) -> Result<String, TelemetryError> {
        let v = self.raw(idx).trim();
        if v.is_empty() {
            return Err(self.err(idx, "must not be empty"));
        }
        Ok(v.to_string())
    }

    fn optional(&self, idx: usize) -> Option<String> {
        let v = self.raw(idx).trim();
        (!v.is_empty()).then(|| v.to_string())
    }

    fn parse_with<T>(&self, idx: usize, f: impl FnOnce(&str) -> Result<T, String>) -> Result<T, TelemetryError> {
        f(self.raw(idx).trim()).map_err(|reason| self.err(idx, reason))
    }

    fn int(&self, idx: usize) -> Result<i32, TelemetryError> {
        self.parse_with(idx, |s| s.parse::<i32>().map_err(|e| e.to_string()))
    }

    /// Integer milliseconds; fractional input is truncated.
    fn millis(&self, idx: usize) -> Result<i64, TelemetryError> {
        self.parse_with(idx, |s| {
            if let Ok(v) = s.parse::<i64>() {
                return Ok(v);
            }
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v.trunc() as i64),
                _ => Err(format!("`{s}` is not a number of milliseconds")),
            }
        })
    }

    fn timestamp(&self, idx: usize) -> Result<Millis, TelemetryError> {
        let v = self.millis(idx)?;
        if v <= 0 {
            return Err(self.err(idx, "timestamp must be > 0"));
        }
        Ok(v)
    }

    fn duration(&self, idx: usize) -> Result<u64, TelemetryError> {
        let v = self.millis(idx)?;
        u64::try_from(v).map_err(|_| self.err(idx, "duration must be >= 0"))
    }
}

fn read_rows<T>(
    path: &Path,
    header: &[&str],
    mut parse: impl FnMut(&Row<'_>) -> Result<T, TelemetryError>,
) -> Result<Vec<T>, TelemetryError> {
    let csv_err = |source| TelemetryError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file_name = path.display().to_string();
    let file = File::open(path).map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let found = reader.headers().map_err(csv_err)?.clone();
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != header {
        return Err(TelemetryError::Malformed {
            file: file_name,
            line: 1,
            field: "header".into(),
            reason: format!("expected `{}`, found `{}`", header.join(","), found.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(TelemetryError::Malformed {
                file: file_name,
                line,
                field: header.get(record.len()).unwrap_or(&"row").to_string(),
                reason: format!("expected {} columns, found {}", header.len(), record.len()),
            });
        }
        out.push(parse(&Row {
            file: &file_name,
            line,
            header,
            record: &record,
        })?);
    }
    Ok(out)
}

/// Writes the five schema files into `dir`.
pub fn export(records: &TelemetryRecords, dir: &Path) -> Result<(), TelemetryError> {
    fs::create_dir_all(dir).map_err(|source| TelemetryError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_csv(&dir.join("traces.csv"), &TRACES_HEADER, records.spans.iter().map(|s| {
        vec![
            s.trace_id.clone(),
            s.span_id.clone(),
            s.parent_span_id.clone().unwrap_or_default(),
            s.cmdb_id.clone(),
            s.service.clone(),
            s.operation.clone(),
            s.start_time.to_string(),
            s.duration.to_string(),
            s.status_code.to_string(),
        ]
    }))?;
    write_csv(&dir.join("logs.csv"), &LOGS_HEADER, records.logs.iter().map(|l| {
        vec![
            l.timestamp.to_string(),
            l.component.clone(),
            l.level.to_string(),
            l.kind.clone(),
            l.message.clone(),
        ]
    }))?;
    write_csv(&dir.join("metrics.csv"), &METRICS_HEADER, records.metrics.iter().map(|m| {
        vec![m.timestamp.to_string(), m.component.clone(), m.metric.clone(), m.value.to_string()]
    }))?;
    write_csv(&dir.join("alerts.csv"), &ALERTS_HEADER, records.alerts.iter().map(|a| {
        vec![
            a.alert_id.clone(),
            a.timestamp.to_string(),
            a.trace_id.clone(),
            a.entry_span_id.clone(),
            a.description.clone(),
        ]
    }))?;
    let topo = &records.topology;
    write_csv(&dir.join("topology.csv"), &TOPOLOGY_HEADER, topo.pod_to_service.iter().map(|(pod, svc)| {
        vec![pod.clone(), svc.clone(), topo.node_of(pod).unwrap_or_default().to_string()]
    }))?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), TelemetryError> {
    let csv_err = |source| TelemetryError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn empty_directory_yields_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let (store, report) = ingest(&SourcePaths::from_dir(dir.path()), SourceFormat::GenericCsv).unwrap();
        assert_eq!(report, IngestReport::default());
        assert!(store.spans().is_empty());
    }

    #[test]
    fn malformed_row_names_file_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "topology.csv", "cmdb_id,service,node\npod-a,svc,node-1\n");
        write(
            dir.path(),
            "traces.csv",
            "trace_id,span_id,parent_span_id,cmdb_id,service,operation,start_time_ms,duration_ms,status_code\n\
             t1,s1,,pod-a,svc,op,1000,5,0\n\
             t1,s2,s1,pod-a,svc,op,1001,-3,0\n",
        );
        let err = ingest(&SourcePaths::from_dir(dir.path()), SourceFormat::GenericCsv).unwrap_err();
        match err {
            TelemetryError::Malformed { file, line, field, .. } => {
                assert!(file.ends_with("traces.csv"));
                assert_eq!(line, 3);
                assert_eq!(field, "duration_ms");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fractional_timestamps_truncate_and_messages_unescape() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "logs.csv",
            "timestamp_ms,cmdb_id,level,kind,message\n1000.9,pod-a,ERROR,k1,\"said \"\"no\"\", then, left\"\n",
        );
        let (store, _) = ingest(&SourcePaths::from_dir(dir.path()), SourceFormat::GenericCsv).unwrap();
        let log = &store.logs()[0];
        assert_eq!(log.timestamp, 1000);
        assert_eq!(log.message, "said \"no\", then, left");
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "metrics.csv", "ts,cmdb_id,metric,value\n");
        let err = ingest(&SourcePaths::from_dir(dir.path()), SourceFormat::GenericCsv).unwrap_err();
        assert!(matches!(err, TelemetryError::Malformed { ref field, .. } if field == "header"));
    }
}
