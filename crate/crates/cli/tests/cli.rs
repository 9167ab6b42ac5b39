use std::path::Path;
use std::process::{Command, Output};

fn ldcmtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldcmtl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = r#"
name = "small"
baseline_run = "ls"

[suite]
id = "quad_random"
tasks = 3
dim = 3
seed = 1

[timing]
repetitions = 0

[[run]]
name = "ls"
method = "ls"
steps = 400
alpha = 0.01
x0 = { low = -1.0, high = 1.0 }

[[run]]
name = "ldc"
method = "ldc_single"
steps = 400
alpha = 0.01
x0 = { low = -1.0, high = 1.0 }

[[run]]
name = "mgda"
method = "mgda"
steps = 400
alpha = 0.01
x0 = { low = -1.0, high = 1.0 }
"#;

/// CSV text with the `step_micros` column removed.
fn without_timing(path: &Path) -> String {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "step_micros").unwrap();
    let keep = |r: &csv::StringRecord| {
        r.iter()
            .enumerate()
            .filter(|(i, _)| *i != col)
            .map(|(_, v)| v)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = keep(&header);
    for r in rdr.records() {
        out.push('\n');
        out.push_str(&keep(&r.unwrap()));
    }
    out
}

#[test]
fn run_writes_trajectories_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    let o = ldcmtl(&["run", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "ls.csv",
        "ls.json",
        "ldc.csv",
        "ldc.json",
        "mgda.csv",
        "mgda.json",
        "summary.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("ldc_single"));
}

#[test]
fn rerun_is_byte_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let oa = ldcmtl(&["run", &spec, "--out", a.to_str().unwrap(), "--threads", "1"]);
    let ob = ldcmtl(&["run", &spec, "--out", b.to_str().unwrap(), "--threads", "4"]);
    assert_eq!(oa.status.code(), Some(0));
    assert_eq!(ob.status.code(), Some(0));
    for name in ["ls", "ldc", "mgda"] {
        let f = format!("{name}.csv");
        assert_eq!(
            without_timing(&a.join(&f)),
            without_timing(&b.join(&f)),
            "{name}"
        );
        let j = format!("{name}.json");
        assert_eq!(
            std::fs::read(a.join(&j)).unwrap(),
            std::fs::read(b.join(&j)).unwrap()
        );
    }
}

#[test]
fn seed_flag_changes_random_starts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ldcmtl(&["run", &spec, "--out", a.to_str().unwrap(), "--seed", "1"]);
    ldcmtl(&["run", &spec, "--out", b.to_str().unwrap(), "--seed", "2"]);
    assert_ne!(
        without_timing(&a.join("ls.csv")),
        without_timing(&b.join("ls.csv"))
    );
}

#[test]
fn validation_error_exits_one_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.toml",
        &SMALL.replace("name = \"ldc\"", "name = \"ldc\"\nlambda = -0.1"),
    );
    let o = ldcmtl(&["run", &spec, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run[1].lambda"));
}

#[test]
fn unknown_key_exits_one_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.toml",
        "name = \"x\"\nlamda = 1\n[suite]\nid = \"toy2\"\n",
    );
    let o = ldcmtl(&["run", &spec]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("lamda"), "{err}");
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.toml",
        r#"
name = "boom"
[suite]
id = "quad_random"
tasks = 2
dim = 2
[timing]
repetitions = 0
[[run]]
name = "gd"
method = "ls"
steps = 500
x_stepper = "gd"
alpha = 100.0
x0 = [1.0, 1.0]
"#,
    );
    let out = dir.path().join("out");
    let o = ldcmtl(&["run", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let csv = std::fs::read_to_string(out.join("gd.csv")).unwrap();
    assert!(csv.lines().last().unwrap().contains(",diverged,"));
}

#[test]
fn empty_run_list_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.toml",
        "name = \"e\"\n[suite]\nid = \"toy2\"\n",
    );
    let out = dir.path().join("out");
    let o = ldcmtl(&["run", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("summary.json").exists());
}

#[test]
fn gradcheck_single_suite() {
    let o = ldcmtl(&["gradcheck", "--suite", "quad3", "--points", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let s = String::from_utf8_lossy(&o.stdout);
    assert_eq!(s.lines().filter(|l| l.ends_with("PASS")).count(), 7);
    let o = ldcmtl(&["gradcheck", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plot_and_pareto_on_run_output() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    ldcmtl(&["run", &spec, "--out", out.to_str().unwrap()]);
    let files: Vec<String> = ["ls", "ldc", "mgda"]
        .iter()
        .map(|n| out.join(format!("{n}.csv")).display().to_string())
        .collect();
    let plots = dir.path().join("plots");
    let mut args = vec![
        "plot",
        "--kind",
        "timing_bars",
        "--svg",
        "--out",
        plots.to_str().unwrap(),
    ];
    args.extend(files.iter().map(String::as_str));
    let o = ldcmtl(&args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(plots.join("timing_bars.csv").exists());
    assert!(plots.join("timing_bars.svg").exists());

    let mut args = vec!["plot", "--kind", "bars"];
    args.extend(files.iter().map(String::as_str));
    let o = ldcmtl(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("weights_over_time"));

    let mut args = vec!["pareto"];
    args.extend(files.iter().map(String::as_str));
    let o = ldcmtl(&args);
    assert_eq!(o.status.code(), Some(0));
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.starts_with("file,step,loss_1,loss_2,loss_3,residual,dominated"));
    assert_eq!(s.lines().count(), 4);
}

#[test]
fn sweep_on_shipped_spec() {
    let spec = concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs/quad_sweep.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = ldcmtl(&["sweep", spec, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(dir.path().join("front.csv").exists());
}

#[test]
fn shipped_specs_parse() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs");
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        ldc_mtl::harness::load_spec(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn usage_error_exits_one() {
    assert_eq!(ldcmtl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ldcmtl(&["--help"]).status.code(), Some(0));
}
