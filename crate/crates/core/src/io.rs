//! CSV arrays and the JSON run manifest.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::control::ControlSequence;
use crate::error::{Error, Result};
use crate::grid::Field;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Writes a header and rows of already formatted cells.
pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a numeric table.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    write_csv(path, header, rows.iter().map(|r| r.iter().map(|&v| fmt_f64(v)).collect()))
}

/// Reads a numeric CSV back as `(header, rows)`.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|e| csv_error(path, format!("{c:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn node_header(first: &str, nodes: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((0..nodes).map(|k| format!("x_{k}")))
        .collect()
}

/// `t, x_0 … x_J`, one row per time level.
pub fn write_trajectory(path: &Path, states: &[Field], dt: f64) -> Result<()> {
    let nodes = states.first().map_or(0, |s| s.values().len());
    let rows: Vec<Vec<f64>> = states
        .iter()
        .enumerate()
        .map(|(j, s)| std::iter::once(j as f64 * dt).chain(s.values().iter().copied()).collect())
        .collect();
    write_table(path, &node_header("t", nodes), &rows)
}

/// `t, u_0 … u_{N−1}`, one row per control interval.
pub fn write_controls(path: &Path, controls: &ControlSequence) -> Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..controls.actuators()).map(|l| format!("u_{l}")))
        .collect();
    let rows: Vec<Vec<f64>> = (0..controls.steps())
        .map(|j| std::iter::once(j as f64 * controls.dt()).chain(controls.row(j).iter().copied()).collect())
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_controls(path: &Path, dt: f64) -> Result<ControlSequence> {
    let (header, rows) = read_table(path)?;
    let n = header.len().saturating_sub(1);
    let values = rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
    ControlSequence::from_values(rows.len(), n, dt, values)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedLineage {
    pub master_seed: u64,
    pub streams: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_name: String,
    pub config_hash: String,
    pub seed: SeedLineage,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub summary: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
