//! Report files: the verdict grid and the overheads as JSON and CSV, plus
//! the event trace log. Output is byte-deterministic for a given run.
//!
//! CSV layouts are stable interfaces:
//! `matrix.csv` — `attack,protocol,verdict,metric_name,metric_value`, one
//! row per cell carrying its headline metric;
//! `overheads.csv` — `protocol,handshake_bytes,chi_bytes,fleet_bytes,flops_linear,seconds_linear`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::overhead::OverheadReport;

use super::AttackMatrix;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot encode {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("cannot encode {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| ReportError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<String, ReportError> {
    serde_json::to_string_pretty(value).map_err(|source| ReportError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_matrix_json(path: &Path, matrix: &AttackMatrix) -> Result<(), ReportError> {
    let mut text = to_json_pretty(path, matrix)?;
    text.push('\n');
    write_file(path, &text)
}

pub fn write_matrix_csv(path: &Path, matrix: &AttackMatrix) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |source: csv::Error| ReportError::Csv {
        path: path.display().to_string(),
        source,
    };
    w.write_record([
        "attack",
        "protocol",
        "verdict",
        "metric_name",
        "metric_value",
    ])
    .map_err(fail)?;
    for cell in &matrix.cells {
        let (metric_name, metric_value) = cell.outcome.primary_metric();
        w.write_record([
            cell.attack.name(),
            cell.protocol.name(),
            cell.outcome.verdict.label(),
            metric_name,
            &metric_value.to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().expect("vec writer never fails");
    write_file(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_overheads_json(path: &Path, report: &OverheadReport) -> Result<(), ReportError> {
    let mut text = to_json_pretty(path, report)?;
    text.push('\n');
    write_file(path, &text)
}

pub fn write_overheads_csv(path: &Path, report: &OverheadReport) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |source: csv::Error| ReportError::Csv {
        path: path.display().to_string(),
        source,
    };
    w.write_record([
        "protocol",
        "handshake_bytes",
        "chi_bytes",
        "fleet_bytes",
        "flops_linear",
        "seconds_linear",
    ])
    .map_err(fail)?;
    for row in &report.rows {
        w.write_record([
            row.protocol.name(),
            &row.handshake_bytes.to_string(),
            &row.chi_bytes.to_string(),
            &row.fleet_bytes.to_string(),
            &row.flops_linear.to_string(),
            &format!("{:e}", row.seconds_linear),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().expect("vec writer never fails");
    write_file(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Concatenate labeled trace blocks into one log.
pub fn render_traces(blocks: &[(String, String)]) -> String {
    let mut out = String::new();
    for (label, body) in blocks {
        out.push_str(&format!("==== {label} ====\n"));
        out.push_str(body);
    }
    out
}

pub fn write_trace_log(path: &Path, blocks: &[(String, String)]) -> Result<(), ReportError> {
    write_file(path, &render_traces(blocks))
}

/// The standard file set for one run.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub matrix_json: PathBuf,
    pub matrix_csv: PathBuf,
    pub overheads_json: PathBuf,
    pub overheads_csv: PathBuf,
    pub trace_log: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        ReportPaths {
            matrix_json: dir.join("matrix.json"),
            matrix_csv: dir.join("matrix.csv"),
            overheads_json: dir.join("overheads.json"),
            overheads_csv: dir.join("overheads.csv"),
            trace_log: dir.join("trace.log"),
        }
    }
}

/// Write the full report set.
pub fn emit_reports(
    matrix: &AttackMatrix,
    overheads: &OverheadReport,
    traces: &[(String, String)],
    paths: &ReportPaths,
) -> Result<(), ReportError> {
    write_matrix_json(&paths.matrix_json, matrix)?;
    write_matrix_csv(&paths.matrix_csv, matrix)?;
    write_overheads_json(&paths.overheads_json, overheads)?;
    write_overheads_csv(&paths.overheads_csv, overheads)?;
    write_trace_log(&paths.trace_log, traces)
}
