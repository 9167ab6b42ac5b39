//! Linear-scalarization weight sweeps and dominance bookkeeping.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::SimplexWeights;
use crate::par;
use crate::solvers::{run, Method, RunConfig};
use crate::suites::TaskSuite;

use super::experiment::{execute_run, output_dir, RunStatus};
use super::io::{ensure_dir, read_trajectory_csv, write_json, write_table};
use super::spec::ExperimentSpec;

/// `a` dominates `b`: no loss worse and at least one strictly better.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x <= y)
        && a.iter().zip(b).any(|(x, y)| x < y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    /// Weight on the first task.
    pub weight: f64,
    pub l1: f64,
    pub l2: f64,
    pub residual: f64,
    /// Some supplied candidate point dominates this row.
    pub dominated: bool,
    pub diverged: bool,
}

/// Runs `template` as linear scalarization with weights `(w, 1 − w)` for each
/// grid entry. Rows are computed independently and flagged when any of
/// `candidates` dominates them.
pub fn sweep_ls_front(
    suite: &dyn TaskSuite,
    weights: &[f64],
    template: &RunConfig,
    candidates: &[[f64; 2]],
) -> Result<Vec<FrontRow>> {
    if suite.num_tasks() != 2 {
        return Err(Error::config(format!(
            "front tracing needs a two-task suite, got {} tasks",
            suite.num_tasks()
        )));
    }
    let configs = weights
        .iter()
        .map(|&w| {
            let mut cfg = template.clone();
            cfg.method = Method::Ls;
            cfg.name = format!("ls_w{w}");
            cfg.ls_weights = Some(SimplexWeights::new(DVector::from_vec(vec![w, 1.0 - w]))?);
            cfg.validate(2, suite.dim())?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = par::map(&configs, |cfg| {
        let w = cfg
            .ls_weights
            .as_ref()
            .map(|v| v.as_slice()[0])
            .unwrap_or(0.5);
        match run(suite, cfg) {
            Ok(out) => {
                let l = [out.final_losses[0], out.final_losses[1]];
                FrontRow {
                    weight: w,
                    l1: l[0],
                    l2: l[1],
                    residual: out.final_residual,
                    dominated: candidates.iter().any(|c| dominates(c, &l)),
                    diverged: false,
                }
            }
            Err(_) => FrontRow {
                weight: w,
                l1: f64::NAN,
                l2: f64::NAN,
                residual: f64::NAN,
                dominated: false,
                diverged: true,
            },
        }
    });
    Ok(rows)
}

/// Final point of one loss-discrepancy run in the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub name: String,
    pub lambda: f64,
    pub status: RunStatus,
    pub losses: Option<Vec<f64>>,
    pub residual: Option<f64>,
    /// Some swept scalarization endpoint dominates this point.
    pub dominated_by_front: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub points: Vec<SweepPoint>,
    pub front: Vec<FrontRow>,
}

impl SweepReport {
    pub fn any_diverged(&self) -> bool {
        self.points.iter().any(|p| p.status == RunStatus::Diverged)
            || self.front.iter().any(|r| r.diverged)
    }
}

/// Runs every non-`ls` run of the spec at each `λ` of the sweep grid (or at its
/// own `λ` when the grid is empty), traces the scalarization front and writes
/// `front.csv`, `points.csv` and `sweep.json`.
pub fn run_sweep(spec: &ExperimentSpec, out: Option<&Path>) -> Result<SweepReport> {
    let suite = spec.validate()?;
    let sweep = spec
        .sweep
        .as_ref()
        .ok_or_else(|| Error::validation("sweep", "the spec has no [sweep] table"))?;
    let template = match &sweep.template {
        Some(t) => spec.run(t).cloned(),
        None => spec
            .runs
            .iter()
            .find(|r| r.method == Method::Ls)
            .or(spec.runs.first())
            .cloned(),
    }
    .ok_or_else(|| Error::validation("sweep.template", "no run to use as template"))?;

    let mut configs = Vec::new();
    for r in spec.runs.iter().filter(|r| r.method != Method::Ls) {
        if sweep.lambdas.is_empty() {
            configs.push(r.clone());
        }
        for &l in &sweep.lambdas {
            let mut c = r.clone();
            c.name = format!("{}_lambda{l}", r.name);
            c.bilevel.lambda = l;
            configs.push(c);
        }
    }
    let results = par::map(&configs, |cfg| execute_run(suite.as_ref(), cfg));
    let candidates: Vec<[f64; 2]> = results
        .iter()
        .filter_map(|r| r.summary.final_losses.as_ref().map(|l| [l[0], l[1]]))
        .collect();
    let front = sweep_ls_front(suite.as_ref(), &sweep.weights, &template, &candidates)?;
    let points = results
        .into_iter()
        .zip(&configs)
        .map(|(r, cfg)| {
            let dominated_by_front = r.summary.final_losses.as_ref().is_some_and(|l| {
                front
                    .iter()
                    .filter(|f| !f.diverged)
                    .any(|f| dominates(&[f.l1, f.l2], l))
            });
            SweepPoint {
                name: cfg.name.clone(),
                lambda: cfg.bilevel.lambda,
                status: r.summary.status,
                losses: r.summary.final_losses,
                residual: r.summary.final_residual,
                dominated_by_front,
            }
        })
        .collect();

    let report = SweepReport {
        name: spec.name.clone(),
        points,
        front,
    };
    let dir = output_dir(spec, out);
    ensure_dir(&dir)?;
    let front_rows: Vec<Vec<String>> = report
        .front
        .iter()
        .map(|r| {
            vec![
                r.weight.to_string(),
                r.l1.to_string(),
                r.l2.to_string(),
                r.residual.to_string(),
                r.dominated.to_string(),
                r.diverged.to_string(),
            ]
        })
        .collect();
    write_table(
        &dir.join("front.csv"),
        &["weight", "l1", "l2", "residual", "dominated", "diverged"],
        &front_rows,
    )?;
    let point_rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            let l = |i: usize| {
                p.losses
                    .as_ref()
                    .map(|l| l[i].to_string())
                    .unwrap_or_default()
            };
            vec![
                p.name.clone(),
                p.lambda.to_string(),
                l(0),
                l(1),
                p.residual.map(|r| r.to_string()).unwrap_or_default(),
                p.dominated_by_front.to_string(),
            ]
        })
        .collect();
    write_table(
        &dir.join("points.csv"),
        &[
            "name",
            "lambda",
            "l1",
            "l2",
            "residual",
            "dominated_by_front",
        ],
        &point_rows,
    )?;
    write_json(&dir.join("sweep.json"), &report)?;
    Ok(report)
}

/// Final point of a stored trajectory with its dominance status among the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub file: String,
    pub step: usize,
    pub losses: Vec<f64>,
    pub residual: f64,
    pub dominated: bool,
}

/// Reads the last row of each trajectory and flags the points dominated by
/// another point of the set.
pub fn pareto_table(paths: &[impl AsRef<Path>]) -> Result<Vec<ParetoEntry>> {
    let mut entries = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let recs = read_trajectory_csv(p)?;
        let last = recs
            .last()
            .ok_or_else(|| Error::invalid(format!("{}: no records", p.display())))?;
        entries.push(ParetoEntry {
            file: p.display().to_string(),
            step: last.step,
            losses: last.losses.clone(),
            residual: last.residual,
            dominated: false,
        });
    }
    if let Some(k) = entries.first().map(|e| e.losses.len()) {
        if entries.iter().any(|e| e.losses.len() != k) {
            return Err(Error::invalid("trajectories have different task counts"));
        }
    }
    let flags: Vec<bool> = entries
        .iter()
        .map(|e| entries.iter().any(|o| dominates(&o.losses, &e.losses)))
        .collect();
    for (e, d) in entries.iter_mut().zip(flags) {
        e.dominated = d;
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::spec::{parse_spec, SuiteSpec};
    use crate::solvers::StepperKind;
    use crate::suites::QuadSuite;

    fn gd_template(steps: usize) -> RunConfig {
        let mut cfg = RunConfig::new("t", Method::Ls, vec![3.0, -2.0], steps);
        cfg.x_stepper = StepperKind::Gd;
        cfg.bilevel.alpha = 0.5;
        cfg
    }

    fn symmetric() -> QuadSuite {
        QuadSuite::from_spec(&crate::suites::QuadSpec {
            matrices: vec![vec![1.0, 0.0, 0.0, 1.0]; 2],
            centers: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            offsets: None,
        })
        .unwrap()
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[0.5, 0.5], &[1.0, 1.0]));
        assert!(dominates(&[0.5, 1.0], &[1.0, 1.0]));
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]));
        assert!(!dominates(&[0.5, 2.0], &[1.0, 1.0]));
    }

    #[test]
    fn symmetric_front_matches_closed_form() {
        let suite = symmetric();
        let weights: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let rows = sweep_ls_front(&suite, &weights, &gd_template(2000), &[]).unwrap();
        for r in &rows {
            let x = suite
                .lower_level_solution(&DVector::from_vec(vec![r.weight, 1.0 - r.weight]))
                .unwrap();
            let l = suite.losses(&x);
            assert!(
                (r.l1 - l[0]).abs() <= 1e-6 && (r.l2 - l[1]).abs() <= 1e-6,
                "{r:?}"
            );
            assert!(r.residual <= 1e-12);
        }
    }

    #[test]
    fn unit_weight_reaches_task_one_optimum() {
        let suite = symmetric();
        let rows = sweep_ls_front(&suite, &[1.0], &gd_template(2000), &[]).unwrap();
        assert!(rows[0].l1.abs() <= 1e-12);
        assert!((rows[0].l2 - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn rows_flagged_by_candidates() {
        let suite = symmetric();
        let rows = sweep_ls_front(&suite, &[0.5], &gd_template(500), &[[0.1, 0.1]]).unwrap();
        assert!(rows[0].dominated);
        let rows = sweep_ls_front(&suite, &[0.5], &gd_template(500), &[[0.6, 0.6]]).unwrap();
        assert!(!rows[0].dominated);
    }

    #[test]
    fn removing_a_grid_point_removes_one_row() {
        let suite = symmetric();
        let all = sweep_ls_front(&suite, &[0.2, 0.5, 0.8], &gd_template(300), &[]).unwrap();
        let some = sweep_ls_front(&suite, &[0.2, 0.8], &gd_template(300), &[]).unwrap();
        assert_eq!(some, vec![all[0].clone(), all[2].clone()]);
    }

    #[test]
    fn three_tasks_rejected() {
        let suite = SuiteSpec::preset("quad3").unwrap().build().unwrap();
        let t = RunConfig::new("t", Method::Ls, vec![0.0; 3], 10);
        assert!(matches!(
            sweep_ls_front(suite.as_ref(), &[0.5], &t, &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sweep_writes_files() {
        let spec = parse_spec(
            r#"
name = "sw"
[suite]
id = "quad"
matrices = [[1.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 1.0]]
centers = [[-1.0, 0.0], [1.0, 0.0]]
[timing]
repetitions = 0
[sweep]
weights = [0.25, 0.5, 0.75]
lambdas = [0.5, 1.0]
[[run]]
name = "ls"
method = "ls"
steps = 500
x_stepper = "gd"
alpha = 0.5
[[run]]
name = "ldc"
method = "ldc_single"
steps = 3000
alpha = 0.05
x0 = [0.3, 0.4]
"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = run_sweep(&spec, Some(dir.path())).unwrap();
        assert_eq!(report.front.len(), 3);
        assert_eq!(report.points.len(), 2);
        assert!(report.points.iter().all(|p| !p.dominated_by_front));
        for f in ["front.csv", "points.csv", "sweep.json"] {
            assert!(dir.path().join(f).exists());
        }
    }

    #[test]
    fn pareto_table_flags_dominated_runs() {
        use crate::harness::io::write_trajectory_csv;
        let suite = symmetric();
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for (i, steps) in [1usize, 500].into_iter().enumerate() {
            let mut cfg = gd_template(steps);
            cfg.x0 = crate::solvers::InitPoint::Fixed(vec![0.0, 3.0]);
            cfg.bilevel.alpha = 0.1;
            let out = run(&suite, &cfg).unwrap();
            let p = dir.path().join(format!("{i}.csv"));
            write_trajectory_csv(&p, &out.records, 2, 2).unwrap();
            paths.push(p);
        }
        let table = pareto_table(&paths).unwrap();
        assert!(table[0].dominated);
        assert!(!table[1].dominated);
    }
}
