use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldc_mtl::harness::{
    emit_plot_data, gradcheck_suite, load_spec, pareto_table, run_experiment, run_sweep, PlotKind,
    RunStatus, SuiteSpec, DEFAULT_POINTS,
};
use ldc_mtl::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_DIVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ldcmtl",
    version,
    about = "Loss-discrepancy multi-task optimization experiments"
)]
struct Cli {
    /// Output directory (overrides the spec's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; run `i` gets `seed + i`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel runs (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute every run of a spec file.
    Run { spec: PathBuf },
    /// Trace the scalarization front and run the λ grid of a spec file.
    Sweep { spec: PathBuf },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Suite id; every preset when absent.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        points: usize,
    },
    /// Final points of stored trajectories with their dominance status.
    Pareto {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Emit plot data from stored trajectories.
    Plot {
        #[arg(long)]
        kind: String,
        /// Also write an SVG per plot.
        #[arg(long)]
        svg: bool,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Diverged(_) => ExitCode::from(EXIT_DIVERGED),
        _ => ExitCode::from(EXIT_VALIDATION),
    }
}

fn cmd_run(spec: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<ExitCode, Error> {
    let mut spec = load_spec(spec)?;
    if let Some(s) = seed {
        spec.override_seed(s);
    }
    let report = run_experiment(&spec, out)?;
    println!(
        "{:<24} {:<10} {:<9} {:>14} {:>12} {:>12}",
        "run", "method", "status", "residual", "delta_m%", "μs/step"
    );
    for r in &report.runs {
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$e}"));
        let status = match r.status {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::Failed => "failed",
        };
        println!(
            "{:<24} {:<10} {:<9} {:>14} {:>12} {:>12}",
            r.name,
            r.method,
            status,
            opt(r.final_residual, 3),
            r.delta_m.map_or("-".to_string(), |v| format!("{v:.3}")),
            r.timing
                .as_ref()
                .map(|t| t.median_micros_per_step)
                .or(r.median_step_micros)
                .map_or("-".to_string(), |v| format!("{v:.2}")),
        );
        if let Some(e) = &r.error {
            eprintln!("  {}: {e}", r.name);
        }
    }
    Ok(if report.any_diverged() {
        ExitCode::from(EXIT_DIVERGED)
    } else if report.any_failed() {
        ExitCode::from(EXIT_VALIDATION)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_sweep(spec: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<ExitCode, Error> {
    let mut spec = load_spec(spec)?;
    if let Some(s) = seed {
        spec.override_seed(s);
    }
    let report = run_sweep(&spec, out)?;
    println!(
        "{:>8} {:>14} {:>14} {:>12} dominated",
        "weight", "l1", "l2", "residual"
    );
    for r in &report.front {
        println!(
            "{:>8} {:>14.6e} {:>14.6e} {:>12.3e} {}",
            r.weight, r.l1, r.l2, r.residual, r.dominated
        );
    }
    println!();
    println!(
        "{:<28} {:>8} {:>14} {:>14} {:>12} dominated_by_front",
        "run", "lambda", "l1", "l2", "residual"
    );
    for p in &report.points {
        let l = |i: usize| {
            p.losses
                .as_ref()
                .map_or("-".to_string(), |l| format!("{:.6e}", l[i]))
        };
        println!(
            "{:<28} {:>8} {:>14} {:>14} {:>12} {}",
            p.name,
            p.lambda,
            l(0),
            l(1),
            p.residual.map_or("-".to_string(), |r| format!("{r:.3e}")),
            p.dominated_by_front
        );
    }
    Ok(if report.any_diverged() {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_gradcheck(suite: Option<&str>, points: usize, seed: u64) -> Result<ExitCode, Error> {
    let ids: Vec<&str> = match suite {
        Some(id) => vec![id],
        None => SuiteSpec::PRESETS.to_vec(),
    };
    let mut all_passed = true;
    println!(
        "{:<10} {:>3} {:<22} {:>7} {:>12} result",
        "suite", "K", "target", "points", "max_rel_err"
    );
    for id in ids {
        let s = SuiteSpec::preset(id)?.build()?;
        for r in gradcheck_suite(s.as_ref(), points, seed)? {
            all_passed &= r.passed;
            println!(
                "{:<10} {:>3} {:<22} {:>7} {:>12.3e} {}",
                id,
                r.tasks,
                r.target,
                r.points,
                r.max_rel_error,
                if r.passed { "PASS" } else { "FAIL" }
            );
        }
    }
    if all_passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check failed");
        Ok(ExitCode::from(EXIT_VALIDATION))
    }
}

fn cmd_pareto(files: &[PathBuf]) -> Result<ExitCode, Error> {
    let table = pareto_table(files)?;
    let k = table.first().map_or(0, |e| e.losses.len());
    let mut header = vec!["file".to_string(), "step".into()];
    header.extend((1..=k).map(|i| format!("loss_{i}")));
    header.extend(["residual".into(), "dominated".into()]);
    println!("{}", header.join(","));
    for e in &table {
        let mut row = vec![e.file.clone(), e.step.to_string()];
        row.extend(e.losses.iter().map(|l| l.to_string()));
        row.extend([e.residual.to_string(), e.dominated.to_string()]);
        println!("{}", row.join(","));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(
    kind: &str,
    svg: bool,
    files: &[PathBuf],
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let kind: PlotKind = kind.parse()?;
    let out = out.map_or_else(|| PathBuf::from("plots"), Path::to_path_buf);
    for p in emit_plot_data(files, kind, &out, svg)? {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<ExitCode, Error> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Run { spec } => cmd_run(spec, out, cli.seed),
        Command::Sweep { spec } => cmd_sweep(spec, out, cli.seed),
        Command::Gradcheck { suite, points } => {
            cmd_gradcheck(suite.as_deref(), *points, cli.seed.unwrap_or(0))
        }
        Command::Pareto { files } => cmd_pareto(files),
        Command::Plot { kind, svg, files } => cmd_plot(kind, *svg, files, out),
    }
}

#[cfg(feature = "parallel")]
fn with_threads(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<ExitCode, Error> + Send,
) -> Result<ExitCode, Error> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(f)
        }
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<ExitCode, Error> + Send,
) -> Result<ExitCode, Error> {
    if threads.is_some_and(|n| n > 1) {
        eprintln!("warning: built without the `parallel` feature; --threads is ignored");
    }
    f()
}

fn main() -> ExitCode {
    // Usage errors share the validation exit code; 2 is reserved for divergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match with_threads(cli.threads, || dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}
