//! Reading pipeline specs, cluster configs and arrival traces.

use std::fs;
use std::path::{Path, PathBuf};

use pipescale_core::workload::{ArrivalProcess, WorkloadError};
use pipescale_core::{ClusterConfig, Pipeline, PipelineSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: WorkloadError },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.into(), source })
}

/// Loads and validates a pipeline description.
pub fn load_pipeline(path: &Path) -> Result<Pipeline, IoError> {
    let spec: PipelineSpec = read_json(path)?;
    Pipeline::from_spec(&spec).map_err(|e| IoError::Invalid { path: path.into(), message: e.to_string() })
}

/// Loads and validates a cluster configuration.
pub fn load_cluster(path: &Path) -> Result<ClusterConfig, IoError> {
    let cluster: ClusterConfig = read_json(path)?;
    cluster.validate().map_err(|e| IoError::Invalid { path: path.into(), message: e.to_string() })?;
    Ok(cluster)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    /// Header `second,count`: root arrivals per second.
    AggregateCsv,
    /// Header `timestamp_ms`: one arrival per row.
    TimestampCsv,
}

fn parse_err(line: usize, message: impl Into<String>) -> WorkloadError {
    WorkloadError::Parse { line, message: message.into() }
}

/// Parses a trace. Line numbers in errors are 1-based file lines.
pub fn parse_trace(text: &str, format: TraceFormat) -> Result<ArrivalProcess, WorkloadError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut records = reader.records();
    let expected: &[&str] = match format {
        TraceFormat::AggregateCsv => &["second", "count"],
        TraceFormat::TimestampCsv => &["timestamp_ms"],
    };
    let header = match records.next() {
        None => return Err(parse_err(1, "empty file; expected a header")),
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
    };
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(1, format!("expected header `{}`", expected.join(","))));
    }
    let mut lines = Vec::new();
    let mut fields = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != expected.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", expected.len(), record.len())));
        }
        lines.push(line);
        fields.push(record);
    }
    match format {
        TraceFormat::AggregateCsv => {
            let mut rows = Vec::with_capacity(fields.len());
            for (record, &line) in fields.iter().zip(&lines) {
                let parse = |s: &str, what: &str| {
                    s.parse::<u64>().map_err(|_| parse_err(line, format!("{what} `{s}` is not a nonnegative integer")))
                };
                rows.push((parse(&record[0], "second")?, parse(&record[1], "count")?));
            }
            ArrivalProcess::from_aggregate_rows(&rows, |i| lines[i])
        }
        TraceFormat::TimestampCsv => {
            let mut stamps = Vec::with_capacity(fields.len());
            for (record, &line) in fields.iter().zip(&lines) {
                let t = record[0]
                    .parse::<f64>()
                    .ok()
                    .filter(|t| t.is_finite() && *t >= 0.0)
                    .ok_or_else(|| parse_err(line, format!("timestamp `{}` is not a nonnegative number", &record[0])))?;
                stamps.push(t);
            }
            ArrivalProcess::from_timestamps(stamps, |i| lines[i])
        }
    }
}

pub fn load_trace(path: &Path, format: TraceFormat) -> Result<ArrivalProcess, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read { path: path.into(), source })?;
    parse_trace(&text, format).map_err(|source| IoError::Trace { path: path.into(), source })
}
