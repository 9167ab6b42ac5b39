//! Training loop orchestration and trajectory records.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::min_norm::min_norm_weights;
use super::stepper::{StepperKind, StepperState};
use super::steps::{
    ldc_double_step, ldc_single_step, ls_step, mgda_step, StepDiagnostics, Steppers, TrainState,
};
use crate::error::{Error, Result};
use crate::math::SimplexWeights;
use crate::objective::{BilevelConfig, RouterState};
use crate::suites::TaskSuite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LdcSingle,
    LdcDouble,
    Ls,
    Mgda,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::LdcSingle,
        Method::LdcDouble,
        Method::Ls,
        Method::Mgda,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LdcSingle => "ldc_single",
            Self::LdcDouble => "ldc_double",
            Self::Ls => "ls",
            Self::Mgda => "mgda",
        }
    }

    pub fn uses_router(&self) -> bool {
        matches!(self, Self::LdcSingle | Self::LdcDouble)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Initial parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitPoint {
    Fixed(Vec<f64>),
    /// Coordinates drawn uniformly from `[low, high)` with the run seed.
    Uniform {
        low: f64,
        high: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub method: Method,
    pub bilevel: BilevelConfig,
    pub x_stepper: StepperKind,
    pub w_stepper: StepperKind,
    /// Router learning rate; `bilevel.alpha` when absent.
    pub alpha_w: Option<f64>,
    pub steps: usize,
    pub x0: InitPoint,
    /// Initial logits; zeros when absent.
    pub w0: Option<Vec<f64>>,
    /// Scalarization weights for `ls`; uniform when absent.
    pub ls_weights: Option<SimplexWeights>,
    pub record_every: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(name: impl Into<String>, method: Method, x0: Vec<f64>, steps: usize) -> Self {
        Self {
            name: name.into(),
            method,
            bilevel: BilevelConfig::default(),
            x_stepper: StepperKind::Adam,
            w_stepper: StepperKind::Adam,
            alpha_w: None,
            steps,
            x0: InitPoint::Fixed(x0),
            w0: None,
            ls_weights: None,
            record_every: 100,
            seed: 0,
        }
    }

    pub fn validate(&self, num_tasks: usize, dim: usize) -> Result<()> {
        self.bilevel.validate()?;
        if self.steps == 0 {
            return Err(Error::validation("steps", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::validation("record_every", "must be at least 1"));
        }
        if let Some(a) = self.alpha_w {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::validation(
                    "alpha_w",
                    format!("must be positive, got {a}"),
                ));
            }
        }
        match &self.x0 {
            InitPoint::Fixed(v) if v.len() != dim => {
                return Err(Error::validation(
                    "x0",
                    format!("has {} coordinates, suite dimension is {dim}", v.len()),
                ))
            }
            InitPoint::Fixed(v) if v.iter().any(|c| !c.is_finite()) => {
                return Err(Error::validation("x0", "coordinates must be finite"))
            }
            InitPoint::Uniform { low, high }
                if !(low.is_finite() && high.is_finite() && low < high) =>
            {
                return Err(Error::validation("x0", "need finite low < high"))
            }
            _ => {}
        }
        if let Some(w0) = &self.w0 {
            if w0.len() != num_tasks {
                return Err(Error::validation(
                    "w0",
                    format!("has {} logits for {num_tasks} tasks", w0.len()),
                ));
            }
            if w0.iter().any(|c| !c.is_finite()) {
                return Err(Error::validation("w0", "logits must be finite"));
            }
        }
        if let Some(w) = &self.ls_weights {
            if w.len() != num_tasks {
                return Err(Error::validation(
                    "ls_weights",
                    format!("has {} weights for {num_tasks} tasks", w.len()),
                ));
            }
        }
        if let Some(o) = &self.bilevel.upper.task_order {
            if o.len() != num_tasks {
                return Err(Error::validation(
                    "task_order",
                    format!("has {} entries for {num_tasks} tasks", o.len()),
                ));
            }
        }
        if self.method.uses_router() && num_tasks < 2 {
            return Err(Error::validation("method", "needs at least two tasks"));
        }
        Ok(())
    }

    pub fn initial_x(&self, dim: usize) -> DVector<f64> {
        match &self.x0 {
            InitPoint::Fixed(v) => DVector::from_column_slice(v),
            InitPoint::Uniform { low, high } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                DVector::from_fn(dim, |_, _| rng.gen_range(*low..*high))
            }
        }
    }

    pub fn initial_state(&self, suite: &dyn TaskSuite) -> Result<TrainState> {
        let (k, d) = (suite.num_tasks(), suite.dim());
        self.validate(k, d)?;
        let logits = match &self.w0 {
            Some(w) => DVector::from_column_slice(w),
            None => DVector::zeros(k),
        };
        let alpha_w = self.alpha_w.unwrap_or(self.bilevel.alpha);
        Ok(TrainState::new(
            RouterState::new(logits)?,
            self.initial_x(d),
            self.bilevel.normalization_state(k),
            Steppers {
                x: StepperState::new(self.x_stepper, self.bilevel.alpha, d),
                w: StepperState::new(self.w_stepper, alpha_w, k),
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    /// Row at step `T` describing the returned iterate.
    Final,
    /// Last row of a diverged run; values are those of the last good iterate.
    Diverged,
}

impl RecordStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Final => "final",
            Self::Diverged => "diverged",
        }
    }
}

/// Diagnostics at one recorded iterate, plus the checkpoint needed to replay them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub status: RecordStatus,
    pub losses: Vec<f64>,
    pub normalized: Vec<f64>,
    pub weights: Vec<f64>,
    pub f: f64,
    pub g: f64,
    pub phi: f64,
    /// Min-norm residual `min_w ‖Gᵀw‖²` of the raw task gradients.
    pub residual: f64,
    pub grad_w_g_norm: f64,
    pub grad_w_g_inner_norm: Option<f64>,
    pub norm_ratio: Option<f64>,
    pub ratio_capped: bool,
    pub step_micros: f64,
    pub x: Vec<f64>,
    pub logits: Vec<f64>,
    pub baseline: Vec<f64>,
}

impl TrajectoryRecord {
    #[allow(clippy::too_many_arguments)]
    fn from_diag(
        step: usize,
        status: RecordStatus,
        diag: &StepDiagnostics,
        x: &DVector<f64>,
        logits: &DVector<f64>,
        baseline: &DVector<f64>,
        lambda: f64,
        micros: f64,
    ) -> Self {
        Self {
            step,
            status,
            losses: diag.raw.losses.as_slice().to_vec(),
            normalized: diag.losses.as_slice().to_vec(),
            weights: diag.weights.as_slice().to_vec(),
            f: diag.f,
            g: diag.g,
            phi: diag.f + lambda * diag.g,
            residual: min_norm_weights(&diag.raw.grads).residual,
            grad_w_g_norm: diag.grad_w_g_norm,
            grad_w_g_inner_norm: diag.grad_w_g_inner_norm,
            norm_ratio: diag.norm_ratio.map(|r| r.0),
            ratio_capped: diag.norm_ratio.is_some_and(|r| r.1),
            step_micros: micros,
            x: x.as_slice().to_vec(),
            logits: logits.as_slice().to_vec(),
            baseline: baseline.as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<TrajectoryRecord>,
    pub final_x: DVector<f64>,
    pub final_logits: DVector<f64>,
    /// Raw losses at the returned iterate.
    pub final_losses: DVector<f64>,
    pub final_residual: f64,
    /// Per-step wall clock in microseconds, one entry per executed step.
    pub step_micros: Vec<f64>,
}

impl RunOutcome {
    pub fn last(&self) -> &TrajectoryRecord {
        self.records
            .last()
            .expect("a completed run has a final row")
    }
}

/// Executes one step of `method` and returns its diagnostics.
pub fn step_once(
    method: Method,
    state: &mut TrainState,
    suite: &dyn TaskSuite,
    cfg: &BilevelConfig,
    ls_weights: &SimplexWeights,
) -> Result<StepDiagnostics> {
    match method {
        Method::LdcSingle => ldc_single_step(state, suite, cfg),
        Method::LdcDouble => ldc_double_step(state, suite, cfg),
        Method::Ls => ls_step(state, suite, ls_weights, cfg),
        Method::Mgda => mgda_step(state, suite, cfg),
    }
}

/// Runs `config.steps` iterations, recording every `record_every` steps and once
/// more at the returned iterate.
///
/// On divergence the error carries the rows emitted so far followed by a row
/// flagged [`RecordStatus::Diverged`].
pub fn run(suite: &dyn TaskSuite, config: &RunConfig) -> Result<RunOutcome> {
    let mut state = config.initial_state(suite)?;
    let k = suite.num_tasks();
    let ls_weights = config
        .ls_weights
        .clone()
        .unwrap_or_else(|| SimplexWeights::uniform(k));
    let cfg = &config.bilevel;
    let mut records = Vec::new();
    let mut micros = Vec::with_capacity(config.steps);
    let mut last_good: Option<(TrajectoryRecord, TrainState)> = None;

    for t in 0..config.steps {
        let before = state.clone();
        let start = Instant::now();
        match step_once(config.method, &mut state, suite, cfg, &ls_weights) {
            Ok(diag) => {
                let us = start.elapsed().as_secs_f64() * 1e6;
                micros.push(us);
                let rec = TrajectoryRecord::from_diag(
                    t,
                    RecordStatus::Ok,
                    &diag,
                    &before.x,
                    before.router.logits(),
                    state.norm.baseline(),
                    cfg.lambda,
                    us,
                );
                if t % config.record_every == 0 {
                    records.push(rec.clone());
                }
                last_good = Some((rec, before));
            }
            Err(Error::Diverged(mut d)) => {
                d.step = t;
                let mut flagged = match &last_good {
                    Some((rec, good)) => {
                        d.last_x = good.x.clone();
                        d.last_logits = good.router.logits().clone();
                        rec.clone()
                    }
                    None => empty_record(&before, k),
                };
                flagged.step = t;
                flagged.status = RecordStatus::Diverged;
                records.push(flagged);
                d.records = records;
                return Err(Error::Diverged(d));
            }
            Err(e) => return Err(e),
        }
    }

    // Diagnostics at x_T from a throwaway step.
    let mut probe = state.clone();
    let t = config.steps;
    let diag = match step_once(config.method, &mut probe, suite, cfg, &ls_weights) {
        Ok(d) => d,
        Err(Error::Diverged(mut d)) => {
            d.step = t;
            let mut flagged = last_good
                .map(|(r, _)| r)
                .unwrap_or_else(|| empty_record(&state, k));
            flagged.step = t;
            flagged.status = RecordStatus::Diverged;
            records.push(flagged);
            d.records = records;
            return Err(Error::Diverged(d));
        }
        Err(e) => return Err(e),
    };
    let last = TrajectoryRecord::from_diag(
        t,
        RecordStatus::Final,
        &diag,
        &state.x,
        state.router.logits(),
        probe.norm.baseline(),
        cfg.lambda,
        0.0,
    );
    let final_residual = last.residual;
    records.push(last);
    Ok(RunOutcome {
        records,
        final_losses: diag.raw.losses,
        final_x: state.x,
        final_logits: state.router.logits().clone(),
        final_residual,
        step_micros: micros,
    })
}

fn empty_record(state: &TrainState, k: usize) -> TrajectoryRecord {
    TrajectoryRecord {
        step: 0,
        status: RecordStatus::Diverged,
        losses: vec![0.0; k],
        normalized: vec![0.0; k],
        weights: state.router.weights().as_slice().to_vec(),
        f: 0.0,
        g: 0.0,
        phi: 0.0,
        residual: 0.0,
        grad_w_g_norm: 0.0,
        grad_w_g_inner_norm: None,
        norm_ratio: None,
        ratio_capped: false,
        step_micros: 0.0,
        x: state.x.as_slice().to_vec(),
        logits: state.router.logits().as_slice().to_vec(),
        baseline: state.norm.baseline().as_slice().to_vec(),
    }
}
