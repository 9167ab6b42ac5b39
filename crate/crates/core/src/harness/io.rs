//! Trajectory CSV files and their JSON sidecars.
//!
//! Column order: `step, status, loss_1..K, nloss_1..K, w_1..K, f, g, phi,
//! residual, grad_w_g_norm, grad_w_g_inner_norm, norm_ratio, ratio_capped,
//! step_micros, x_1..d, logit_1..K, baseline_1..K`. Floats are written with the
//! shortest representation that parses back to the same value; absent optional
//! values are empty fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{RecordStatus, RunConfig, TrajectoryRecord};

use super::spec::SuiteSpec;

pub const FORMAT_VERSION: &str = "ldc-mtl-trajectory/1";

pub fn trajectory_columns(k: usize, d: usize) -> Vec<String> {
    let mut cols = vec!["step".to_string(), "status".to_string()];
    let indexed = |cols: &mut Vec<String>, prefix: &str, n: usize| {
        cols.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    };
    indexed(&mut cols, "loss", k);
    indexed(&mut cols, "nloss", k);
    indexed(&mut cols, "w", k);
    cols.extend(
        [
            "f",
            "g",
            "phi",
            "residual",
            "grad_w_g_norm",
            "grad_w_g_inner_norm",
            "norm_ratio",
            "ratio_capped",
            "step_micros",
        ]
        .map(String::from),
    );
    indexed(&mut cols, "x", d);
    indexed(&mut cols, "logit", k);
    indexed(&mut cols, "baseline", k);
    cols
}

fn record_fields(r: &TrajectoryRecord) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = vec![r.step.to_string(), r.status.as_str().to_string()];
    for v in r.losses.iter().chain(&r.normalized).chain(&r.weights) {
        out.push(v.to_string());
    }
    out.extend([
        r.f.to_string(),
        r.g.to_string(),
        r.phi.to_string(),
        r.residual.to_string(),
        r.grad_w_g_norm.to_string(),
        opt(r.grad_w_g_inner_norm),
        opt(r.norm_ratio),
        r.ratio_capped.to_string(),
        r.step_micros.to_string(),
    ]);
    for v in r.x.iter().chain(&r.logits).chain(&r.baseline) {
        out.push(v.to_string());
    }
    out
}

pub fn write_trajectory_csv(
    path: &Path,
    records: &[TrajectoryRecord],
    k: usize,
    d: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_columns(k, d))?;
    for r in records {
        if r.losses.len() != k || r.x.len() != d {
            return Err(Error::invalid(format!(
                "record at step {} does not match K = {k}, d = {d}",
                r.step
            )));
        }
        w.write_record(record_fields(r))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_status(s: &str) -> Result<RecordStatus> {
    Ok(match s {
        "ok" => RecordStatus::Ok,
        "final" => RecordStatus::Final,
        "diverged" => RecordStatus::Diverged,
        other => return Err(Error::invalid(format!("unknown status `{other}`"))),
    })
}

/// Reads a trajectory CSV; `K` and `d` are inferred from the header.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (k, d) = (count("loss_"), count("x_"));
    if header.iter().collect::<Vec<_>>() != trajectory_columns(k, d) {
        return Err(Error::invalid(format!(
            "{}: header is not a trajectory header",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |col: usize| {
            Error::invalid(format!(
                "{}: row {} column `{}` is malformed",
                path.display(),
                row + 1,
                &header[col]
            ))
        };
        let num = |col: usize| rec[col].parse::<f64>().map_err(|_| bad(col));
        let opt = |col: usize| -> Result<Option<f64>> {
            if rec[col].is_empty() {
                Ok(None)
            } else {
                num(col).map(Some)
            }
        };
        let vec = |start: usize, n: usize| (start..start + n).map(num).collect::<Result<Vec<_>>>();
        let s = 2 + 3 * k;
        out.push(TrajectoryRecord {
            step: rec[0].parse().map_err(|_| bad(0))?,
            status: parse_status(&rec[1])?,
            losses: vec(2, k)?,
            normalized: vec(2 + k, k)?,
            weights: vec(2 + 2 * k, k)?,
            f: num(s)?,
            g: num(s + 1)?,
            phi: num(s + 2)?,
            residual: num(s + 3)?,
            grad_w_g_norm: num(s + 4)?,
            grad_w_g_inner_norm: opt(s + 5)?,
            norm_ratio: opt(s + 6)?,
            ratio_capped: rec[s + 7].parse().map_err(|_| bad(s + 7))?,
            step_micros: num(s + 8)?,
            x: vec(s + 9, d)?,
            logits: vec(s + 9 + d, k)?,
            baseline: vec(s + 9 + d + k, k)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub step: usize,
    pub reason: String,
}

/// JSON sidecar written next to each trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub format: String,
    pub name: String,
    pub method: String,
    pub suite: SuiteSpec,
    pub config: RunConfig,
    pub tasks: usize,
    pub dim: usize,
    pub columns: Vec<String>,
    pub std: String,
    /// `ok` or `diverged`.
    pub status: String,
    pub divergence: Option<DivergenceInfo>,
}

impl TrajectoryMeta {
    pub fn new(
        suite: &SuiteSpec,
        config: &RunConfig,
        k: usize,
        d: usize,
        divergence: Option<DivergenceInfo>,
    ) -> Self {
        Self {
            format: FORMAT_VERSION.to_string(),
            name: config.name.clone(),
            method: config.method.as_str().to_string(),
            suite: suite.clone(),
            config: config.clone(),
            tasks: k,
            dim: d,
            columns: trajectory_columns(k, d),
            std: "population".to_string(),
            status: if divergence.is_some() {
                "diverged"
            } else {
                "ok"
            }
            .to_string(),
            divergence,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes an arbitrary numeric table with a header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
