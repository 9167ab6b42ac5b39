//! Plot data derived from stored trajectories.
//!
//! | kind                 | file                      | columns                          |
//! |----------------------|---------------------------|----------------------------------|
//! | `loss_space`         | `<stem>_loss_space.csv`   | `l1, l2` ordered by step         |
//! | `weights_over_time`  | `<stem>_weights.csv`      | `step, w_1..K`                   |
//! | `residual_over_time` | `<stem>_residual.csv`     | `step, residual`                 |
//! | `timing_bars`        | `timing_bars.csv`         | `method, median_step_micros, ratio_to_ls` |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{RecordStatus, TrajectoryRecord};

use super::io::{ensure_dir, read_json, read_trajectory_csv, write_table, TrajectoryMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    LossSpace,
    WeightsOverTime,
    ResidualOverTime,
    TimingBars,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::LossSpace,
        PlotKind::WeightsOverTime,
        PlotKind::ResidualOverTime,
        PlotKind::TimingBars,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LossSpace => "loss_space",
            Self::WeightsOverTime => "weights_over_time",
            Self::ResidualOverTime => "residual_over_time",
            Self::TimingBars => "timing_bars",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
                Error::validation(
                    "kind",
                    format!("unknown plot kind `{s}`; valid kinds: {}", valid.join(", ")),
                )
            })
    }
}

impl std::fmt::Display for PlotKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One trajectory loaded for plotting.
#[derive(Debug, Clone)]
pub struct LoadedTrajectory {
    pub stem: String,
    /// Method from the sidecar, or the file stem when no sidecar exists.
    pub method: String,
    pub records: Vec<TrajectoryRecord>,
}

pub fn load_trajectory(path: &Path) -> Result<LoadedTrajectory> {
    let records = read_trajectory_csv(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trajectory".into());
    let sidecar = path.with_extension("json");
    let method = if sidecar.exists() {
        read_json::<TrajectoryMeta>(&sidecar)?.method
    } else {
        stem.clone()
    };
    Ok(LoadedTrajectory {
        stem,
        method,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingBar {
    pub method: String,
    pub median_step_micros: f64,
    /// Relative to the `ls` bar; absent without an `ls` trajectory.
    pub ratio_to_ls: Option<f64>,
}

/// Per-method median of the recorded per-step times. Rows of the final probe
/// and flagged rows carry no timing and are skipped.
pub fn timing_bars(trajs: &[LoadedTrajectory]) -> Vec<TimingBar> {
    let mut methods: Vec<&str> = Vec::new();
    for t in trajs {
        if !methods.contains(&t.method.as_str()) {
            methods.push(&t.method);
        }
    }
    let mut bars: Vec<TimingBar> = methods
        .iter()
        .map(|m| {
            let mut v: Vec<f64> = trajs
                .iter()
                .filter(|t| t.method == *m)
                .flat_map(|t| &t.records)
                .filter(|r| r.status == RecordStatus::Ok)
                .map(|r| r.step_micros)
                .collect();
            v.sort_by(f64::total_cmp);
            let median = match v.len() {
                0 => f64::NAN,
                n if n % 2 == 1 => v[n / 2],
                n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
            };
            TimingBar {
                method: m.to_string(),
                median_step_micros: median,
                ratio_to_ls: None,
            }
        })
        .collect();
    if let Some(ls) = bars
        .iter()
        .find(|b| b.method == "ls")
        .map(|b| b.median_step_micros)
    {
        for b in &mut bars {
            b.ratio_to_ls = Some(b.median_step_micros / ls);
        }
    }
    bars
}

/// Writes the data files for `kind` (and SVGs when `svg` is set) into `out`
/// and returns the paths written.
pub fn emit_plot_data(
    paths: &[impl AsRef<Path>],
    kind: PlotKind,
    out: &Path,
    svg: bool,
) -> Result<Vec<PathBuf>> {
    if paths.is_empty() {
        return Err(Error::invalid("no trajectory files given"));
    }
    let trajs = paths
        .iter()
        .map(|p| load_trajectory(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(out)?;
    let mut written = Vec::new();
    match kind {
        PlotKind::TimingBars => {
            let bars = timing_bars(&trajs);
            let rows: Vec<Vec<String>> = bars
                .iter()
                .map(|b| {
                    vec![
                        b.method.clone(),
                        b.median_step_micros.to_string(),
                        b.ratio_to_ls.map(|r| r.to_string()).unwrap_or_default(),
                    ]
                })
                .collect();
            let p = out.join("timing_bars.csv");
            write_table(&p, &["method", "median_step_micros", "ratio_to_ls"], &rows)?;
            written.push(p);
            if svg {
                let p = out.join("timing_bars.svg");
                let items: Vec<(String, f64)> = bars
                    .iter()
                    .map(|b| (b.method.clone(), b.median_step_micros))
                    .collect();
                write_svg(&p, &bar_svg("median step time", "μs per step", &items))?;
                written.push(p);
            }
        }
        _ => {
            for t in &trajs {
                let (suffix, header, rows, series, labels) = series_for(kind, t)?;
                let p = out.join(format!("{}_{suffix}.csv", t.stem));
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                write_table(&p, &header, &rows)?;
                written.push(p);
                if svg {
                    let p = out.join(format!("{}_{suffix}.svg", t.stem));
                    write_svg(&p, &line_svg(&t.stem, labels.0, labels.1, &series))?;
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}

type Series = Vec<(String, Vec<(f64, f64)>)>;

#[allow(clippy::type_complexity)]
fn series_for(
    kind: PlotKind,
    t: &LoadedTrajectory,
) -> Result<(
    &'static str,
    Vec<String>,
    Vec<Vec<String>>,
    Series,
    (&'static str, &'static str),
)> {
    let recs = &t.records;
    Ok(match kind {
        PlotKind::LossSpace => {
            if recs.iter().any(|r| r.losses.len() != 2) {
                return Err(Error::invalid(format!(
                    "{}: loss_space needs two tasks",
                    t.stem
                )));
            }
            let pts: Vec<(f64, f64)> = recs.iter().map(|r| (r.losses[0], r.losses[1])).collect();
            (
                "loss_space",
                vec!["l1".into(), "l2".into()],
                pts.iter()
                    .map(|(a, b)| vec![a.to_string(), b.to_string()])
                    .collect(),
                vec![(t.stem.clone(), pts)],
                ("L1", "L2"),
            )
        }
        PlotKind::WeightsOverTime => {
            let k = recs.first().map_or(0, |r| r.weights.len());
            let mut header = vec!["step".to_string()];
            header.extend((1..=k).map(|i| format!("w_{i}")));
            let rows = recs
                .iter()
                .map(|r| {
                    std::iter::once(r.step.to_string())
                        .chain(r.weights.iter().map(|w| w.to_string()))
                        .collect()
                })
                .collect();
            let series = (0..k)
                .map(|i| {
                    (
                        format!("w_{}", i + 1),
                        recs.iter().map(|r| (r.step as f64, r.weights[i])).collect(),
                    )
                })
                .collect();
            ("weights", header, rows, series, ("step", "weight"))
        }
        PlotKind::ResidualOverTime => {
            let pts: Vec<(f64, f64)> = recs.iter().map(|r| (r.step as f64, r.residual)).collect();
            (
                "residual",
                vec!["step".into(), "residual".into()],
                recs.iter()
                    .map(|r| vec![r.step.to_string(), r.residual.to_string()])
                    .collect(),
                vec![("residual".into(), pts)],
                ("step", "residual"),
            )
        }
        PlotKind::TimingBars => unreachable!("handled by the caller"),
    })
}

fn write_svg(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn frame(svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        H - M,
        W - M,
        H - M,
        H - M,
        W / 2.0,
        H - 15.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel),
    );
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn line_svg(title: &str, xlabel: &str, ylabel: &str, series: &Series) -> String {
    let pts = || series.iter().flat_map(|(_, p)| p.iter());
    let (x0, x1) = range(pts().map(|p| p.0));
    let (y0, y1) = range(pts().map(|p| p.1));
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut svg = String::new();
    frame(&mut svg, title, xlabel, ylabel);
    for (v, x, anchor) in [(x0, sx(x0), "start"), (x1, sx(x1), "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="{anchor}">{v:.4}</text>"#,
            H - M + 15.0
        );
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{v:.4}</text>"#,
            M - 4.0
        );
    }
    for (i, (name, p)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = p
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        if let Some(first) = path.first() {
            let (cx, cy) = first.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            W - M + 5.0,
            M + 15.0 * i as f64,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bar_svg(title: &str, ylabel: &str, items: &[(String, f64)]) -> String {
    let (_, hi) = range(items.iter().map(|i| i.1).chain([0.0]));
    let mut svg = String::new();
    frame(&mut svg, title, "method", ylabel);
    let slot = (W - 2.0 * M) / items.len().max(1) as f64;
    for (i, (name, v)) in items.iter().enumerate() {
        let h = if v.is_finite() {
            v / hi * (H - 2.0 * M)
        } else {
            0.0
        };
        let x = M + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
            H - M - h,
            slot * 0.7,
            COLORS[i % COLORS.len()],
            x + slot * 0.35,
            H - M + 15.0,
            escape(name),
            x + slot * 0.35,
            H - M - h - 4.0,
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::run_experiment;
    use crate::harness::spec::{ExperimentSpec, SuiteSpec, TimingSpec};
    use crate::solvers::{Method, RunConfig};

    fn experiment(dir: &Path, suite: &str, d: usize) -> Vec<PathBuf> {
        let mut spec = ExperimentSpec::new("p", SuiteSpec::preset(suite).unwrap());
        spec.timing = TimingSpec::DISABLED;
        for m in [Method::Ls, Method::LdcSingle, Method::Mgda] {
            let mut cfg = RunConfig::new(m.as_str(), m, vec![0.5; d], 300);
            cfg.record_every = 10;
            cfg.bilevel.alpha = 0.01;
            spec.runs.push(cfg);
        }
        run_experiment(&spec, Some(dir)).unwrap();
        ["ls", "ldc_single", "mgda"]
            .iter()
            .map(|n| dir.join(format!("{n}.csv")))
            .collect()
    }

    #[test]
    fn unknown_kind_lists_valid_kinds() {
        let e = "bars".parse::<PlotKind>().unwrap_err().to_string();
        for k in PlotKind::ALL {
            assert!(e.contains(k.as_str()), "{e}");
        }
        assert_eq!(
            "timing_bars".parse::<PlotKind>().unwrap(),
            PlotKind::TimingBars
        );
    }

    #[test]
    fn loss_space_projects_records() {
        let dir = tempfile::tempdir().unwrap();
        let files = experiment(dir.path(), "toy2", 2);
        let out = dir.path().join("plots");
        let written = emit_plot_data(&files[1..2], PlotKind::LossSpace, &out, true).unwrap();
        assert_eq!(written.len(), 2);
        let text = std::fs::read_to_string(&written[0]).unwrap();
        let recs = read_trajectory_csv(&files[1]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("l1,l2"));
        for (line, r) in lines.zip(&recs) {
            assert_eq!(line, format!("{},{}", r.losses[0], r.losses[1]));
        }
        let svg = std::fs::read_to_string(&written[1]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("L1") && svg.contains("L2"));
    }

    #[test]
    fn weights_rows_sum_to_one_for_eleven_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let files = experiment(dir.path(), "quad11", 3);
        let out = dir.path().join("plots");
        let written = emit_plot_data(&files[1..2], PlotKind::WeightsOverTime, &out, false).unwrap();
        let mut rdr = csv::Reader::from_path(&written[0]).unwrap();
        assert_eq!(rdr.headers().unwrap().len(), 12);
        for row in rdr.records() {
            let row = row.unwrap();
            let s: f64 = row.iter().skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn timing_bars_one_row_per_method() {
        let dir = tempfile::tempdir().unwrap();
        let files = experiment(dir.path(), "quad3", 3);
        let out = dir.path().join("plots");
        let written = emit_plot_data(&files, PlotKind::TimingBars, &out, true).unwrap();
        let mut rdr = csv::Reader::from_path(&written[0]).unwrap();
        let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[0][0], "ls");
        assert_eq!(&rows[0][2], "1");
        assert!(rows[1][2].parse::<f64>().unwrap() > 0.0);
    }

    #[test]
    fn residual_over_time_columns() {
        let dir = tempfile::tempdir().unwrap();
        let files = experiment(dir.path(), "quad2", 3);
        let out = dir.path().join("plots");
        let written = emit_plot_data(&files[..1], PlotKind::ResidualOverTime, &out, false).unwrap();
        let text = std::fs::read_to_string(&written[0]).unwrap();
        assert!(text.starts_with("step,residual\n0,"));
    }
}
