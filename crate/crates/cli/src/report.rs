//! Report files.
//!
//! `report.json` holds the schema version, subcommand, seed, the fully
//! resolved scenario, the verdict and the result record. Object keys are
//! sorted and floats are written in shortest round-trip form, so the same
//! scenario and seed always produce the same bytes. CSV tables carry a
//! header row; missing values are written as `NaN`.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::{ScenarioConfig, SCHEMA_VERSION};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str], rows: Vec<Vec<f64>>) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows }
    }
}

pub fn assemble(subcommand: &str, cfg: &ScenarioConfig, verdict: bool, result: Value) -> Result<Value, CliError> {
    let config = serde_json::to_value(cfg).map_err(|e| CliError::Io(format!("config serialization: {e}")))?;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": subcommand,
        "seed": cfg.seed,
        "config": config,
        "verdict": verdict,
        "result": result,
    }))
}

pub fn render(report: &Value) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn emit_report(report: &Value, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join("report.json");
    fs::write(&path, render(report)?).map_err(|e| io(&path, e))
}

pub fn emit_table(table: &Table, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    w.write_record(&table.header).map_err(|e| io(path, e))?;
    for row in &table.rows {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}
