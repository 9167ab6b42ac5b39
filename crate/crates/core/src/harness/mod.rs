//! Experiment orchestration: spec files, batch runs, trajectory files, sweeps,
//! gradient checks and plot data.

mod experiment;
mod gradcheck;
mod io;
mod plot;
mod spec;
mod sweep;

pub use experiment::{
    execute_run, output_dir, replay_error, run_experiment, time_per_step, ExperimentReport,
    RunResult, RunStatus, RunSummary, Timing,
};
pub use gradcheck::{
    gradcheck_suite, relative_error, GradCheckResult, Target, DEFAULT_POINTS, FD_STEP,
    GRADCHECK_TOL, TOY_CLAMP_MARGIN,
};
pub use io::{
    read_json, read_trajectory_csv, trajectory_columns, write_json, write_trajectory_csv,
    DivergenceInfo, TrajectoryMeta, FORMAT_VERSION,
};
pub use plot::{
    emit_plot_data, load_trajectory, timing_bars, LoadedTrajectory, PlotKind, TimingBar,
};
pub use spec::{
    load_spec, parse_spec, save_spec, spec_to_string, ExperimentSpec, SuiteSpec, SweepSpec,
    TimingSpec, DEFAULT_RECORD_EVERY,
};
pub use sweep::{
    dominates, pareto_table, run_sweep, sweep_ls_front, FrontRow, ParetoEntry, SweepPoint,
    SweepReport,
};
