//! Run outputs: `timeseries.csv` and `summary.json`.

use std::fs;
use std::path::Path;

use pipescale_core::metrics::SimResult;
use pipescale_core::{DropPolicy, PolicyMode};
use serde::Serialize;
use serde_json::Value;

use crate::io::IoError;

pub const TIMESERIES_HEADER: [&str; 7] =
    ["second", "demand_qps", "served_qps", "violation_ratio", "accuracy", "utilization", "mode"];

/// Identifies the run a summary belongs to.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub config_digest: String,
    pub seed: u64,
    pub policy_mode: PolicyMode,
    pub drop_policy: DropPolicy,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Rounds every float in a JSON tree to six decimals.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("checked");
            let r = (x * 1e6).round() / 1e6;
            *v = serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r }).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

pub fn timeseries_csv(result: &SimResult) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(TIMESERIES_HEADER).expect("writing to memory");
    for row in &result.series {
        w.write_record([
            row.second.to_string(),
            fmt_f64(row.demand_qps),
            fmt_f64(row.served_qps),
            fmt_opt(row.violation_ratio),
            fmt_opt(row.accuracy),
            fmt_f64(row.utilization),
            row.mode.map(|m| m.as_str().to_string()).unwrap_or_default(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV output is UTF-8")
}

pub fn summary_json(result: &SimResult, info: &RunInfo) -> String {
    let mut v = serde_json::to_value(&result.summary).expect("summary serializes");
    let extra = serde_json::to_value(info).expect("run info serializes");
    if let (Value::Object(map), Value::Object(more)) = (&mut v, extra) {
        map.extend(more);
    }
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("JSON value serializes");
    s.push('\n');
    s
}

fn write(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents).map_err(|source| IoError::Write { path: path.into(), source })
}

/// Writes `timeseries.csv` and `summary.json` into `out_dir`, creating it.
pub fn write_outputs(result: &SimResult, info: &RunInfo, out_dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(out_dir).map_err(|source| IoError::Write { path: out_dir.into(), source })?;
    write(&out_dir.join("timeseries.csv"), &timeseries_csv(result))?;
    write(&out_dir.join("summary.json"), &summary_json(result, info))
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Write { path: dir.into(), source })?;
    }
    write(path, contents)
}
