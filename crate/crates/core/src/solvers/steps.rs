//! One-iteration update rules for every method.
//!
//! Each step evaluates the suite once at the current iterate, refreshes the
//! normalization baseline if due, computes both block gradients from the same
//! `(W^t, x^t)` and only then moves the variables.

use nalgebra::{DMatrix, DVector};

use super::min_norm::min_norm_weights;
use super::stepper::StepperState;
use crate::error::{Divergence, Error, Result};
use crate::math::{self, SimplexWeights};
use crate::metrics::norm_ratio_checked;
use crate::objective::{
    lower_terms_with_weights, upper_terms_with_weights, BilevelConfig, ObjectiveTerms, RouterState,
};
use crate::suites::{Evaluation, NormalizationState, TaskSuite};

/// Losses or gradient norms beyond this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Separate update rules for the parameters and the router logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Steppers {
    pub x: StepperState,
    pub w: StepperState,
}

/// Everything a training loop mutates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub router: RouterState,
    pub x: DVector<f64>,
    pub norm: NormalizationState,
    pub steppers: Steppers,
    /// Index of the next step.
    pub t: usize,
}

impl TrainState {
    pub fn new(
        router: RouterState,
        x: DVector<f64>,
        norm: NormalizationState,
        steppers: Steppers,
    ) -> Self {
        Self {
            router,
            x,
            norm,
            steppers,
            t: 0,
        }
    }
}

/// Quantities evaluated at the pre-update iterate of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub raw: Evaluation,
    pub losses: DVector<f64>,
    /// Weights that combined the task gradients this step.
    pub weights: SimplexWeights,
    pub f: f64,
    pub g: f64,
    /// `‖∇_W g(W, x)‖`; zero for methods without a router.
    pub grad_w_g_norm: f64,
    /// `‖∇_W g(W, z_N)‖` (double loop only).
    pub grad_w_g_inner_norm: Option<f64>,
    /// `(ratio, capped)` of the two norms above (double loop only).
    pub norm_ratio: Option<(f64, bool)>,
}

/// How the double-loop `W` update obtains its correction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    /// `∇_W g(W, z_N)` from the warm-started inner loop.
    InnerLoop,
    /// `∇_W g(W, x*)` from the suite's closed-form minimizer.
    Exact,
    /// The correction is replaced by zero; the inner loop still runs.
    Zero,
}

fn divergence(step: usize, reason: String, state: &TrainState) -> Error {
    Error::Diverged(Box::new(Divergence {
        step,
        reason,
        last_logits: state.router.logits().clone(),
        last_x: state.x.clone(),
        records: Vec::new(),
    }))
}

fn check_raw(eval: &Evaluation, state: &TrainState) -> Result<()> {
    if let Some(i) = eval
        .losses
        .iter()
        .position(|l| !l.is_finite() || l.abs() > DIVERGENCE_LIMIT)
    {
        return Err(divergence(
            state.t,
            format!("loss {i} = {}", eval.losses[i]),
            state,
        ));
    }
    for (i, row) in eval.grads.row_iter().enumerate() {
        let n = row.norm();
        if !n.is_finite() || n > DIVERGENCE_LIMIT {
            return Err(divergence(
                state.t,
                format!("gradient {i} has norm {n}"),
                state,
            ));
        }
    }
    Ok(())
}

fn check_update(grad: &DVector<f64>, what: &str, state: &TrainState) -> Result<()> {
    if grad.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(divergence(
            state.t,
            format!("{what} update is not finite"),
            state,
        ))
    }
}

/// Evaluation, baseline refresh and normalization at the current iterate.
fn prepare(
    state: &mut TrainState,
    suite: &dyn TaskSuite,
) -> Result<(Evaluation, DVector<f64>, DMatrix<f64>)> {
    let raw = suite.evaluate(&state.x);
    check_raw(&raw, state)?;
    let t = state.t;
    state.norm.capture(&raw.losses, t);
    let (l, g) = state.norm.normalize(&raw.losses, &raw.grads);
    Ok((raw, l, g))
}

pub(crate) struct LdcTerms {
    pub weights: DVector<f64>,
    pub upper: ObjectiveTerms,
    pub lower: ObjectiveTerms,
}

pub(crate) fn ldc_terms(
    router: &RouterState,
    losses: &DVector<f64>,
    grads: &DMatrix<f64>,
    cfg: &BilevelConfig,
) -> Result<LdcTerms> {
    let k = losses.len();
    if k < 2 {
        return Err(Error::invalid(
            "loss-discrepancy control needs at least two tasks",
        ));
    }
    if router.num_tasks() != k {
        return Err(Error::invalid(format!(
            "router has {} logits for {k} tasks",
            router.num_tasks()
        )));
    }
    let order: Vec<usize> = match &cfg.upper.task_order {
        Some(o) => o.clone(),
        None => (0..k).collect(),
    };
    let weights = math::softmax_unchecked(router.logits());
    let upper = upper_terms_with_weights(&weights, losses, grads, &cfg.upper, &order);
    let lower = lower_terms_with_weights(&weights, losses, grads);
    Ok(LdcTerms {
        weights,
        upper,
        lower,
    })
}

fn apply(
    state: &mut TrainState,
    grad_x: &DVector<f64>,
    grad_w: Option<&DVector<f64>>,
) -> Result<()> {
    check_update(grad_x, "x", state)?;
    if let Some(gw) = grad_w {
        check_update(gw, "W", state)?;
    }
    state.steppers.x.step(&mut state.x, grad_x);
    if let Some(gw) = grad_w {
        state.steppers.w.step(state.router.logits_mut(), gw);
    }
    state.t += 1;
    Ok(())
}

/// Single-loop update: both blocks descend `f + λg` from the same iterate.
pub fn ldc_single_step(
    state: &mut TrainState,
    suite: &dyn TaskSuite,
    cfg: &BilevelConfig,
) -> Result<StepDiagnostics> {
    let (raw, l, g) = prepare(state, suite)?;
    let terms = ldc_terms(&state.router, &l, &g, cfg)?;
    let grad_x = &terms.upper.grad_x + &terms.lower.grad_x * cfg.lambda;
    let grad_w = &terms.upper.grad_w + &terms.lower.grad_w * cfg.lambda;
    let diag = StepDiagnostics {
        raw,
        losses: l,
        weights: SimplexWeights::from_raw_unchecked(terms.weights),
        f: terms.upper.value,
        g: terms.lower.value,
        grad_w_g_norm: terms.lower.grad_w.norm(),
        grad_w_g_inner_norm: None,
        norm_ratio: None,
    };
    apply(state, &grad_x, Some(&grad_w))?;
    Ok(diag)
}

/// `N` plain gradient steps on `g(W, ·)` from `z0` at fixed router and baseline.
pub fn inner_z_loop(
    router: &RouterState,
    z0: &DVector<f64>,
    suite: &dyn TaskSuite,
    norm: &NormalizationState,
    beta_eff: f64,
    steps: usize,
) -> Result<DVector<f64>> {
    if steps == 0 {
        return Err(Error::config("the inner loop needs at least one iteration"));
    }
    if !(beta_eff.is_finite() && beta_eff > 0.0) {
        return Err(Error::config(format!(
            "inner step size must be positive, got {beta_eff}"
        )));
    }
    let s = math::softmax_unchecked(router.logits());
    let mut z = z0.clone();
    for n in 0..steps {
        let e = suite.evaluate(&z);
        let (_, g) = norm.normalize(&e.losses, &e.grads);
        let grad = g.tr_mul(&s);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(Box::new(Divergence {
                step: n,
                reason: "inner-loop gradient is not finite".into(),
                last_logits: router.logits().clone(),
                last_x: z,
                records: Vec::new(),
            })));
        }
        z.axpy(-beta_eff, &grad, 1.0);
    }
    Ok(z)
}

/// Double-loop update: the `W` block subtracts `λ∇_W g(W, z_N)` with `z_N` from
/// the warm-started inner loop.
pub fn ldc_double_step(
    state: &mut TrainState,
    suite: &dyn TaskSuite,
    cfg: &BilevelConfig,
) -> Result<StepDiagnostics> {
    ldc_double_step_with(state, suite, cfg, Correction::InnerLoop)
}

pub fn ldc_double_step_with(
    state: &mut TrainState,
    suite: &dyn TaskSuite,
    cfg: &BilevelConfig,
    correction: Correction,
) -> Result<StepDiagnostics> {
    let (raw, l, g) = prepare(state, suite)?;
    let terms = ldc_terms(&state.router, &l, &g, cfg)?;

    let reference = match correction {
        Correction::InnerLoop | Correction::Zero => inner_z_loop(
            &state.router,
            &state.x,
            suite,
            &state.norm,
            cfg.beta_eff(),
            cfg.inner_steps_at(state.t),
        )?,
        Correction::Exact => crate::objective::lower_level_minimizer(
            &state.router,
            &state.x,
            suite,
            &state.norm,
            crate::objective::LowerSolver::Exact,
        )?,
    };
    let e = suite.evaluate(&reference);
    let (lz, gz) = state.norm.normalize(&e.losses, &e.grads);
    let at_reference = lower_terms_with_weights(&terms.weights, &lz, &gz);
    let correction_term = match correction {
        Correction::Zero => DVector::zeros(at_reference.grad_w.len()),
        _ => at_reference.grad_w.clone(),
    };

    let grad_x = &terms.upper.grad_x + &terms.lower.grad_x * cfg.lambda;
    let grad_w = &terms.upper.grad_w + (&terms.lower.grad_w - &correction_term) * cfg.lambda;

    let outer = terms.lower.grad_w.norm();
    let inner = at_reference.grad_w.norm();
    let diag = StepDiagnostics {
        raw,
        losses: l,
        weights: SimplexWeights::from_raw_unchecked(terms.weights),
        f: terms.upper.value,
        g: terms.lower.value,
        grad_w_g_norm: outer,
        grad_w_g_inner_norm: Some(inner),
        norm_ratio: Some(norm_ratio_checked(
            &terms.lower.grad_w,
            &at_reference.grad_w,
        )),
    };
    apply(state, &grad_x, Some(&grad_w))?;
    Ok(diag)
}

fn fixed_weight_diag(
    raw: Evaluation,
    l: DVector<f64>,
    g: &DMatrix<f64>,
    weights: SimplexWeights,
    cfg: &BilevelConfig,
) -> StepDiagnostics {
    let k = l.len();
    let (f, gv) = if k >= 2 {
        let order: Vec<usize> = cfg
            .upper
            .task_order
            .clone()
            .unwrap_or_else(|| (0..k).collect());
        let up = upper_terms_with_weights(weights.as_vector(), &l, g, &cfg.upper, &order);
        (up.value, weights.as_vector().dot(&l))
    } else {
        (0.0, weights.as_vector().dot(&l))
    };
    StepDiagnostics {
        raw,
        losses: l,
        weights,
        f,
        g: gv,
        grad_w_g_norm: 0.0,
        grad_w_g_inner_norm: None,
        norm_ratio: None,
    }
}

/// Linear scalarization: descend `Σ w_i l̃_i` with fixed weights.
pub fn ls_step(
    state: &mut TrainState,
    suite: &dyn TaskSuite,
    weights: &SimplexWeights,
    cfg: &BilevelConfig,
) -> Result<StepDiagnostics> {
    if weights.len() != suite.num_tasks() {
        return Err(Error::invalid(format!(
            "{} scalarization weights for {} tasks",
            weights.len(),
            suite.num_tasks()
        )));
    }
    let (raw, l, g) = prepare(state, suite)?;
    let grad = g.tr_mul(weights.as_vector());
    let diag = fixed_weight_diag(raw, l, &g, weights.clone(), cfg);
    apply(state, &grad, None)?;
    Ok(diag)
}

/// MGDA: descend along the minimum-norm convex combination of task gradients.
pub fn mgda_step(
    state: &mut TrainState,
    suite: &dyn TaskSuite,
    cfg: &BilevelConfig,
) -> Result<StepDiagnostics> {
    let (raw, l, g) = prepare(state, suite)?;
    let mn = min_norm_weights(&g);
    let grad = g.tr_mul(mn.weights.as_vector());
    let diag = fixed_weight_diag(raw, l, &g, mn.weights, cfg);
    apply(state, &grad, None)?;
    Ok(diag)
}
