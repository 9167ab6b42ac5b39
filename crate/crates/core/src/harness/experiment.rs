//! Batch execution of the runs in a spec.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::SimplexWeights;
use crate::metrics::{delta_m, loss_stats, LossStats, MetricDirections};
use crate::objective::RouterState;
use crate::objective::{lower_value_and_grads, upper_value_and_grads};
use crate::par;
use crate::solvers::{min_norm_weights, run, step_once, RunConfig, TrajectoryRecord};
use crate::suites::{SharedSuite, TaskSuite};

use super::io::{ensure_dir, write_json, write_trajectory_csv, DivergenceInfo, TrajectoryMeta};
use super::spec::{ExperimentSpec, TimingSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
    /// The run could not start or stopped on a non-numerical error.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Median over repetitions of the mean per-step wall time.
    pub median_micros_per_step: f64,
    pub repetitions: Vec<f64>,
    pub steps: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub method: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub diverged_at: Option<usize>,
    pub final_losses: Option<Vec<f64>>,
    pub final_residual: Option<f64>,
    pub loss_stats: Option<LossStats>,
    pub median_step_micros: Option<f64>,
    pub timing: Option<Timing>,
    /// Mean relative loss change in percent against the baseline run.
    pub delta_m: Option<f64>,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub tasks: usize,
    pub dim: usize,
    pub baseline_run: Option<String>,
    pub runs: Vec<RunSummary>,
}

impl ExperimentReport {
    pub fn any_diverged(&self) -> bool {
        self.runs.iter().any(|r| r.status == RunStatus::Diverged)
    }

    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(|r| r.status == RunStatus::Failed)
    }

    pub fn run(&self, name: &str) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.name == name)
    }
}

/// Result of one run together with its records.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub records: Vec<TrajectoryRecord>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Executes one run and summarizes it; timing and `Δm` are filled in later.
pub fn execute_run(suite: &dyn TaskSuite, cfg: &RunConfig) -> RunResult {
    let mut summary = RunSummary {
        name: cfg.name.clone(),
        method: cfg.method.as_str().to_string(),
        status: RunStatus::Ok,
        error: None,
        diverged_at: None,
        final_losses: None,
        final_residual: None,
        loss_stats: None,
        median_step_micros: None,
        timing: None,
        delta_m: None,
        csv: None,
    };
    match run(suite, cfg) {
        Ok(mut out) => {
            let losses = out.final_losses.as_slice().to_vec();
            summary.loss_stats = loss_stats(&losses).ok();
            summary.final_losses = Some(losses);
            summary.final_residual = Some(out.final_residual);
            summary.median_step_micros = median(&mut out.step_micros);
            RunResult {
                summary,
                records: out.records,
            }
        }
        Err(Error::Diverged(d)) => {
            summary.status = RunStatus::Diverged;
            summary.error = Some(d.reason.clone());
            summary.diverged_at = Some(d.step);
            RunResult {
                summary,
                records: d.records,
            }
        }
        Err(e) => {
            summary.status = RunStatus::Failed;
            summary.error = Some(e.to_string());
            RunResult {
                summary,
                records: Vec::new(),
            }
        }
    }
}

/// Median over `timing.repetitions` of the mean per-step time, excluding a
/// warmup of `timing.warmup` steps. Each repetition restarts from the initial
/// state.
pub fn time_per_step(
    suite: &dyn TaskSuite,
    cfg: &RunConfig,
    timing: &TimingSpec,
) -> Result<Timing> {
    if !timing.enabled() || timing.steps == 0 {
        return Err(Error::config("timing is disabled"));
    }
    let k = suite.num_tasks();
    let ls = cfg
        .ls_weights
        .clone()
        .unwrap_or_else(|| SimplexWeights::uniform(k));
    let mut reps = Vec::with_capacity(timing.repetitions);
    for _ in 0..timing.repetitions {
        let mut state = cfg.initial_state(suite)?;
        for _ in 0..timing.warmup {
            step_once(cfg.method, &mut state, suite, &cfg.bilevel, &ls)?;
        }
        let start = Instant::now();
        for _ in 0..timing.steps {
            step_once(cfg.method, &mut state, suite, &cfg.bilevel, &ls)?;
        }
        reps.push(start.elapsed().as_secs_f64() * 1e6 / timing.steps as f64);
    }
    let mut sorted = reps.clone();
    Ok(Timing {
        median_micros_per_step: median(&mut sorted).unwrap_or(f64::NAN),
        repetitions: reps,
        steps: timing.steps,
        warmup: timing.warmup,
    })
}

/// Recomputes `f`, `g` and the residual of a record from its checkpoint
/// columns and returns the largest absolute discrepancy.
pub fn replay_error(suite: &dyn TaskSuite, cfg: &RunConfig, rec: &TrajectoryRecord) -> Result<f64> {
    let k = suite.num_tasks();
    let x = DVector::from_column_slice(&rec.x);
    let norm = cfg
        .bilevel
        .normalization_state(k)
        .with_baseline(DVector::from_column_slice(&rec.baseline));
    let raw = suite.evaluate(&x);
    let (l, g) = norm.normalize(&raw.losses, &raw.grads);
    // Logits reproducing the recorded weights; softmax(ln w) = w.
    let logits = DVector::from_iterator(k, rec.weights.iter().map(|w| w.max(1e-300).ln()));
    let router = RouterState::new(logits)?;
    let gv = lower_value_and_grads(&router, &l, &g)?.value;
    let f = if k >= 2 {
        upper_value_and_grads(&router, &l, &g, &cfg.bilevel.upper)?.value
    } else {
        0.0
    };
    let residual = min_norm_weights(&raw.grads).residual;
    let scale = |a: f64| 1.0f64.max(a.abs());
    Ok([
        (f - rec.f).abs() / scale(rec.f),
        (gv - rec.g).abs() / scale(rec.g),
        (residual - rec.residual).abs() / scale(rec.residual),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

pub fn output_dir(spec: &ExperimentSpec, out: Option<&Path>) -> PathBuf {
    match (out, &spec.out_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => o.clone(),
        (None, None) => PathBuf::from("out").join(&spec.name),
    }
}

/// Runs every run of the spec (in parallel when enabled), times them
/// sequentially, and writes `<run>.csv`, `<run>.json` and `summary.json`.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>) -> Result<ExperimentReport> {
    let suite: SharedSuite = spec.validate()?;
    let dir = output_dir(spec, out);
    ensure_dir(&dir)?;
    let (k, d) = (suite.num_tasks(), suite.dim());

    let mut results = par::map(&spec.runs, |cfg| execute_run(suite.as_ref(), cfg));

    if spec.timing.enabled() {
        // Sequential so that timings do not compete for cores.
        for (res, cfg) in results.iter_mut().zip(&spec.runs) {
            if res.summary.status == RunStatus::Ok {
                res.summary.timing = time_per_step(suite.as_ref(), cfg, &spec.timing).ok();
            }
        }
    }

    if let Some(base) = &spec.baseline_run {
        let single = results
            .iter()
            .find(|r| &r.summary.name == base)
            .and_then(|r| r.summary.final_losses.clone());
        if let Some(single) = single {
            let dirs = MetricDirections::all_lower(k);
            for r in &mut results {
                if let Some(multi) = &r.summary.final_losses {
                    r.summary.delta_m = delta_m(multi, &single, &dirs).ok();
                }
            }
        }
    }

    for (res, cfg) in results.iter_mut().zip(&spec.runs) {
        if res.summary.status == RunStatus::Failed {
            continue;
        }
        let csv = dir.join(format!("{}.csv", cfg.name));
        write_trajectory_csv(&csv, &res.records, k, d)?;
        let div = res.summary.diverged_at.map(|step| DivergenceInfo {
            step,
            reason: res.summary.error.clone().unwrap_or_default(),
        });
        let meta = TrajectoryMeta::new(&spec.suite, cfg, k, d, div);
        write_json(&dir.join(format!("{}.json", cfg.name)), &meta)?;
        res.summary.csv = Some(csv.display().to_string());
    }

    let report = ExperimentReport {
        name: spec.name.clone(),
        tasks: k,
        dim: d,
        baseline_run: spec.baseline_run.clone(),
        runs: results.into_iter().map(|r| r.summary).collect(),
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}
