use ldc_mtl::harness::{
    emit_plot_data, pareto_table, parse_spec, read_json, read_trajectory_csv, replay_error,
    run_experiment, run_sweep, ExperimentReport, PlotKind, RunStatus,
};

const SPEC: &str = r#"
name = "pipe"
baseline_run = "ls"

[suite]
id = "quad_random"
tasks = 2
dim = 3
seed = 4

[timing]
repetitions = 0

[sweep]
weights = [0.1, 0.5, 0.9]
lambdas = [0.5, 2.0]
template = "ls"

[[run]]
name = "ls"
method = "ls"
steps = 300
record_every = 50
x_stepper = "gd"
alpha = 0.2
x0 = [0.5, -0.5, 1.0]

[[run]]
name = "single"
method = "ldc_single"
steps = 300
record_every = 50
alpha = 0.01
normalization = "rescale"
x0 = [0.5, -0.5, 1.0]

[[run]]
name = "double"
method = "ldc_double"
steps = 100
record_every = 25
alpha = 0.01
inner_steps = 5
x0 = [0.5, -0.5, 1.0]
"#;

#[test]
fn run_write_read_and_replay() {
    let spec = parse_spec(SPEC).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&spec, Some(dir.path())).unwrap();
    assert_eq!(report.runs.len(), 3);
    assert!(report.runs.iter().all(|r| r.status == RunStatus::Ok));
    assert_eq!(report.run("ls").unwrap().delta_m, Some(0.0));

    let stored: ExperimentReport = read_json(&dir.path().join("summary.json")).unwrap();
    assert_eq!(stored.runs.len(), 3);

    let suite = spec.validate().unwrap();
    for cfg in &spec.runs {
        let recs = read_trajectory_csv(&dir.path().join(format!("{}.csv", cfg.name))).unwrap();
        assert_eq!(recs.last().unwrap().step, cfg.steps);
        for rec in &recs {
            let err = replay_error(suite.as_ref(), cfg, rec).unwrap();
            assert!(err <= 1e-9, "{} step {}: {err}", cfg.name, rec.step);
        }
    }
}

#[test]
fn sweep_pareto_and_plots() {
    let spec = parse_spec(SPEC).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_sweep(&spec, Some(dir.path())).unwrap();
    assert_eq!(report.front.len(), 3);
    // Two router runs, two λ values each.
    assert_eq!(report.points.len(), 4);
    for f in ["front.csv", "points.csv", "sweep.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let runs = dir.path().join("runs");
    run_experiment(&spec, Some(&runs)).unwrap();
    let files: Vec<_> = ["ls", "single", "double"]
        .iter()
        .map(|n| runs.join(format!("{n}.csv")))
        .collect();
    let table = pareto_table(&files).unwrap();
    assert_eq!(table.len(), 3);
    assert!(table.iter().all(|e| e.losses.len() == 2));

    let plots = dir.path().join("plots");
    for kind in [
        PlotKind::LossSpace,
        PlotKind::WeightsOverTime,
        PlotKind::ResidualOverTime,
        PlotKind::TimingBars,
    ] {
        let written = emit_plot_data(&files, kind, &plots, true).unwrap();
        assert!(!written.is_empty());
        assert!(written.iter().all(|p| p.exists()));
    }
}
