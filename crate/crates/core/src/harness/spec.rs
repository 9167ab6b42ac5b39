//! Experiment specification files.
//!
//! A spec is a TOML document with a `[suite]` table, optional `[timing]` and
//! `[sweep]` tables, and one `[[run]]` table per run. Every run key is flat, so
//! a run section reads as a plain key-value list. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{SimplexWeights, SoftAbsParams};
use crate::objective::{BilevelConfig, InnerSchedule, InnerStepRule, TauMode, UpperLevelConfig};
use crate::solvers::{InitPoint, Method, RunConfig, StepperKind};
use crate::suites::{
    scaled_suite, NormalizationMode, QuadSpec, QuadSuite, SharedSuite, Toy2, DEFAULT_EPOCH_LENGTH,
};

pub const DEFAULT_RECORD_EVERY: usize = 100;
pub const DEFAULT_TIMING_REPETITIONS: usize = 5;
pub const DEFAULT_TIMING_STEPS: usize = 1000;
pub const DEFAULT_TIMING_WARMUP: usize = 100;

/// Which task suite an experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum SuiteSpec {
    Toy2 {},
    /// Explicit quadratics.
    Quad(QuadSpec),
    /// Random SPD quadratics drawn from `seed`.
    QuadRandom {
        tasks: usize,
        dim: usize,
        #[serde(default = "default_eig_min")]
        eig_min: f64,
        #[serde(default = "default_eig_max")]
        eig_max: f64,
        #[serde(default = "default_center_scale")]
        center_scale: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Another suite with each task's loss multiplied by a positive constant.
    Scaled {
        base: Box<SuiteSpec>,
        scales: Vec<f64>,
    },
}

fn default_eig_min() -> f64 {
    0.5
}

fn default_eig_max() -> f64 {
    2.0
}

fn default_center_scale() -> f64 {
    1.0
}

impl SuiteSpec {
    /// Built-in suites addressable by a short id.
    pub const PRESETS: [&'static str; 6] =
        ["toy2", "quad_sym2", "quad2", "quad3", "quad11", "scaled2"];

    pub fn preset(id: &str) -> Result<Self> {
        let random = |tasks, seed| SuiteSpec::QuadRandom {
            tasks,
            dim: 3,
            eig_min: default_eig_min(),
            eig_max: default_eig_max(),
            center_scale: 1.5,
            seed,
        };
        Ok(match id {
            "toy2" => SuiteSpec::Toy2 {},
            "quad_sym2" => SuiteSpec::Quad(QuadSpec {
                matrices: vec![vec![1.0, 0.0, 0.0, 1.0]; 2],
                centers: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
                offsets: None,
            }),
            "quad2" => random(2, 2),
            "quad3" => random(3, 3),
            "quad11" => random(11, 11),
            "scaled2" => SuiteSpec::Scaled {
                base: Box::new(random(2, 2)),
                scales: vec![1.0, 1000.0],
            },
            other => {
                return Err(Error::config(format!(
                    "unknown suite `{other}`; valid ids: {}",
                    Self::PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn build(&self) -> Result<SharedSuite> {
        Ok(match self {
            SuiteSpec::Toy2 {} => Arc::new(Toy2),
            SuiteSpec::Quad(q) => Arc::new(QuadSuite::from_spec(q)?),
            SuiteSpec::QuadRandom {
                tasks,
                dim,
                eig_min,
                eig_max,
                center_scale,
                seed,
            } => {
                if *tasks == 0 || *dim == 0 {
                    return Err(Error::validation("suite", "tasks and dim must be positive"));
                }
                if !(*eig_min > 0.0 && eig_min <= eig_max && eig_max.is_finite()) {
                    return Err(Error::validation(
                        "suite.eig_min",
                        "need 0 < eig_min <= eig_max",
                    ));
                }
                if !(center_scale.is_finite() && *center_scale >= 0.0) {
                    return Err(Error::validation(
                        "suite.center_scale",
                        "must be finite and >= 0",
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Arc::new(QuadSuite::random(
                    *tasks,
                    *dim,
                    (*eig_min, *eig_max),
                    *center_scale,
                    &mut rng,
                ))
            }
            SuiteSpec::Scaled { base, scales } => Arc::new(scaled_suite(
                base.build()?,
                DVector::from_column_slice(scales),
            )?),
        })
    }
}

/// Timing repetitions; `repetitions = 0` disables timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSpec {
    pub repetitions: usize,
    pub steps: usize,
    pub warmup: usize,
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            repetitions: DEFAULT_TIMING_REPETITIONS,
            steps: DEFAULT_TIMING_STEPS,
            warmup: DEFAULT_TIMING_WARMUP,
        }
    }
}

impl TimingSpec {
    pub const DISABLED: TimingSpec = TimingSpec {
        repetitions: 0,
        steps: DEFAULT_TIMING_STEPS,
        warmup: DEFAULT_TIMING_WARMUP,
    };

    pub fn enabled(&self) -> bool {
        self.repetitions > 0
    }
}

/// Weight grid for the linear-scalarization front and optional `λ` grid for
/// the loss-discrepancy runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Weight on the first task; the second gets `1 − w`.
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambdas: Vec<f64>,
    /// Run whose settings the scalarization runs copy; the first `ls` run
    /// (or else the first run) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub suite: SuiteSpec,
    pub out_dir: Option<PathBuf>,
    /// Run whose final losses serve as the baseline for `Δm%`.
    pub baseline_run: Option<String>,
    pub timing: TimingSpec,
    pub sweep: Option<SweepSpec>,
    pub svg: bool,
    pub runs: Vec<RunConfig>,
}

impl ExperimentSpec {
    pub fn new(name: impl Into<String>, suite: SuiteSpec) -> Self {
        Self {
            name: name.into(),
            suite,
            out_dir: None,
            baseline_run: None,
            timing: TimingSpec::default(),
            sweep: None,
            svg: false,
            runs: Vec::new(),
        }
    }

    /// Gives every run `seed + index`.
    pub fn override_seed(&mut self, seed: u64) {
        for (i, r) in self.runs.iter_mut().enumerate() {
            r.seed = seed.wrapping_add(i as u64);
        }
    }

    pub fn run(&self, name: &str) -> Option<&RunConfig> {
        self.runs.iter().find(|r| r.name == name)
    }

    /// Checks every run against the suite and the cross-run references.
    pub fn validate(&self) -> Result<SharedSuite> {
        let suite = self.suite.build()?;
        let (k, d) = (suite.num_tasks(), suite.dim());
        let mut seen = std::collections::HashSet::new();
        for (i, r) in self.runs.iter().enumerate() {
            let prefix = format!("run[{i}]");
            validate_name(&r.name).map_err(|m| Error::validation(format!("{prefix}.name"), m))?;
            if !seen.insert(r.name.as_str()) {
                return Err(Error::validation(
                    format!("{prefix}.name"),
                    format!("duplicate run name `{}`", r.name),
                ));
            }
            r.validate(k, d).map_err(|e| prefix_field(e, &prefix))?;
        }
        if let Some(b) = &self.baseline_run {
            if self.run(b).is_none() {
                return Err(Error::validation(
                    "baseline_run",
                    format!("no run named `{b}`"),
                ));
            }
        }
        let t = &self.timing;
        if t.enabled() && (t.repetitions < 5 || t.steps < 1000) {
            return Err(Error::validation(
                "timing",
                "timing needs at least 5 repetitions of at least 1000 steps (or repetitions = 0)",
            ));
        }
        if let Some(s) = &self.sweep {
            if k != 2 {
                return Err(Error::validation(
                    "sweep",
                    "weight sweeps need a two-task suite",
                ));
            }
            for (i, w) in s.weights.iter().enumerate() {
                if !(0.0..=1.0).contains(w) {
                    return Err(Error::validation(
                        format!("sweep.weights[{i}]"),
                        format!("must lie in [0, 1], got {w}"),
                    ));
                }
            }
            for (i, l) in s.lambdas.iter().enumerate() {
                if !(l.is_finite() && *l > 0.0) {
                    return Err(Error::validation(
                        format!("sweep.lambdas[{i}]"),
                        format!("must be positive, got {l}"),
                    ));
                }
            }
            if let Some(t) = &s.template {
                if self.run(t).is_none() {
                    return Err(Error::validation(
                        "sweep.template",
                        format!("no run named `{t}`"),
                    ));
                }
            }
        }
        Ok(suite)
    }
}

fn validate_name(name: &str) -> std::result::Result<(), String> {
    if name.is_empty() {
        return Err("must not be empty".into());
    }
    if !name
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        || name.starts_with('.')
    {
        return Err(format!(
            "`{name}` may only contain letters, digits, `_`, `-` and `.`"
        ));
    }
    Ok(())
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Validation { field, message } => Error::Validation {
            field: format!("{prefix}.{field}"),
            message,
        },
        Error::InvalidInput(m) | Error::Config(m) => Error::Validation {
            field: prefix.to_string(),
            message: m,
        },
        other => other,
    }
}

// ---- file format ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    name: String,
    suite: SuiteSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline_run: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    svg: bool,
    #[serde(default)]
    timing: TimingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepSpec>,
    #[serde(default, rename = "run", skip_serializing_if = "Vec::is_empty")]
    runs: Vec<RunSection>,
}

/// One `[[run]]` table. Absent keys take the library defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    method: Option<Method>,
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x0: Option<InitPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ls_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    record_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_stepper: Option<StepperKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w_stepper: Option<StepperKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inner_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inner_rule: Option<InnerStepRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inner_schedule: Option<InnerSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<TauMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_order: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalization: Option<NormalizationMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epoch_length: Option<usize>,
}

impl RunSection {
    fn resolve(self, index: usize, dim: usize) -> Result<RunConfig> {
        let field = |f: &str| format!("run[{index}].{f}");
        let method = self
            .method
            .ok_or_else(|| Error::validation(field("method"), "is required"))?;
        let steps = self
            .steps
            .ok_or_else(|| Error::validation(field("steps"), "is required"))?;
        let d = BilevelConfig::default();
        let gamma = match self.gamma {
            Some(g) => SoftAbsParams::new(g)
                .map_err(|e| Error::validation(field("gamma"), e.to_string()))?,
            None => SoftAbsParams::default(),
        };
        let ls_weights = match self.ls_weights {
            Some(w) => Some(
                SimplexWeights::new(DVector::from_vec(w))
                    .map_err(|e| Error::validation(field("ls_weights"), e.to_string()))?,
            ),
            None => None,
        };
        Ok(RunConfig {
            name: self.name.unwrap_or_else(|| format!("run{index}")),
            method,
            bilevel: BilevelConfig {
                lambda: self.lambda.unwrap_or(d.lambda),
                alpha: self.alpha.unwrap_or(d.alpha),
                beta: self.beta.unwrap_or(d.beta),
                inner_steps: self.inner_steps.unwrap_or(d.inner_steps),
                inner_rule: self.inner_rule.unwrap_or(d.inner_rule),
                inner_schedule: self.inner_schedule.unwrap_or(d.inner_schedule),
                upper: UpperLevelConfig {
                    tau: self.tau.unwrap_or_default(),
                    gamma,
                    task_order: self.task_order,
                },
                normalization: self.normalization.unwrap_or_default(),
                epoch_length: self.epoch_length.unwrap_or(DEFAULT_EPOCH_LENGTH),
            },
            x_stepper: self.x_stepper.unwrap_or_default(),
            w_stepper: self.w_stepper.unwrap_or_default(),
            alpha_w: self.alpha_w,
            steps,
            x0: self.x0.unwrap_or_else(|| InitPoint::Fixed(vec![0.0; dim])),
            w0: self.w0,
            ls_weights,
            record_every: self.record_every.unwrap_or(DEFAULT_RECORD_EVERY),
            seed: self.seed.unwrap_or(0),
        })
    }

    fn from_config(r: &RunConfig) -> Self {
        let b = &r.bilevel;
        Self {
            name: Some(r.name.clone()),
            method: Some(r.method),
            steps: Some(r.steps),
            x0: Some(r.x0.clone()),
            w0: r.w0.clone(),
            ls_weights: r.ls_weights.as_ref().map(|w| w.as_slice().to_vec()),
            record_every: Some(r.record_every),
            seed: Some(r.seed),
            x_stepper: Some(r.x_stepper),
            w_stepper: Some(r.w_stepper),
            alpha: Some(b.alpha),
            alpha_w: r.alpha_w,
            lambda: Some(b.lambda),
            beta: Some(b.beta),
            inner_steps: Some(b.inner_steps),
            inner_rule: Some(b.inner_rule),
            inner_schedule: Some(b.inner_schedule),
            tau: Some(b.upper.tau),
            gamma: Some(b.upper.gamma.gamma()),
            task_order: b.upper.task_order.clone(),
            normalization: Some(b.normalization),
            epoch_length: Some(b.epoch_length),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Parses and validates a spec from TOML text.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let file: SpecFile = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let suite = file.suite.build()?;
    let runs = file
        .runs
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.resolve(i, suite.dim()))
        .collect::<Result<Vec<_>>>()?;
    let spec = ExperimentSpec {
        name: file.name,
        suite: file.suite,
        out_dir: file.out_dir,
        baseline_run: file.baseline_run,
        timing: file.timing,
        sweep: file.sweep,
        svg: file.svg,
        runs,
    };
    spec.validate()?;
    Ok(spec)
}

/// Serializes a spec with every run key written out explicitly.
pub fn spec_to_string(spec: &ExperimentSpec) -> Result<String> {
    let file = SpecFile {
        name: spec.name.clone(),
        suite: spec.suite.clone(),
        out_dir: spec.out_dir.clone(),
        baseline_run: spec.baseline_run.clone(),
        svg: spec.svg,
        timing: spec.timing,
        sweep: spec.sweep.clone(),
        runs: spec.runs.iter().map(RunSection::from_config).collect(),
    };
    toml::to_string(&file).map_err(|e| Error::config(format!("cannot serialize spec: {e}")))
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec(&text)
}

pub fn save_spec(spec: &ExperimentSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = spec_to_string(spec)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
