//! Upper-level discrepancy objective `f`, lower-level weighted objective `g`,
//! the penalty `p = g(W,x) − g(W,x*)` and their analytic partial gradients.
//!
//! With router weights `σ = softmax(W)` and (normalized) losses `l̃`:
//!
//! ```text
//! g(W,x) = Σ_i σ_i l̃_i(x)
//! f(W,x) = Σ_{i<K} s(τ_i l̃_π(i) − τ_{i+1} l̃_π(i+1)),   s(d) = √(d² + γ)
//! ```
//!
//! where `π` is the gap-chain order and `τ` is either all ones or `σ ∘ π`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, soft_abs, soft_abs_grad, SimplexWeights, SoftAbsParams};
use crate::solvers::inner_z_loop;
use crate::suites::{NormalizationMode, NormalizationState, TaskSuite, DEFAULT_EPOCH_LENGTH};

/// Router logits `W`; the task weights are `softmax(W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterState {
    logits: DVector<f64>,
}

impl RouterState {
    pub fn new(logits: DVector<f64>) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("router logits must be non-empty and finite"));
        }
        Ok(Self { logits })
    }

    /// All-zero logits, i.e. uniform weights.
    pub fn uniform(k: usize) -> Self {
        Self {
            logits: DVector::zeros(k),
        }
    }

    pub fn logits(&self) -> &DVector<f64> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut DVector<f64> {
        &mut self.logits
    }

    pub fn num_tasks(&self) -> usize {
        self.logits.len()
    }

    pub fn weights(&self) -> SimplexWeights {
        SimplexWeights::from_raw_unchecked(math::softmax_unchecked(&self.logits))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauMode {
    /// `τ = 1`: the gaps compare raw (normalized) losses; `f` does not depend on `W`.
    #[default]
    Ones,
    /// `τ = σ(W)`: the gaps compare weighted losses.
    Sigma,
}

impl std::fmt::Display for TauMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ones => "ones",
            Self::Sigma => "sigma",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpperLevelConfig {
    pub tau: TauMode,
    pub gamma: SoftAbsParams,
    /// Gap-chain order; `None` is the identity.
    pub task_order: Option<Vec<usize>>,
}

impl UpperLevelConfig {
    pub fn new(tau: TauMode, gamma: f64) -> Result<Self> {
        Ok(Self {
            tau,
            gamma: SoftAbsParams::new(gamma)?,
            task_order: None,
        })
    }

    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        validate_permutation(&order)?;
        self.task_order = Some(order);
        Ok(self)
    }

    fn order(&self, k: usize) -> Result<Vec<usize>> {
        match &self.task_order {
            None => Ok((0..k).collect()),
            Some(o) if o.len() == k => Ok(o.clone()),
            Some(o) => Err(Error::invalid(format!(
                "task order has {} entries for {k} tasks",
                o.len()
            ))),
        }
    }
}

fn validate_permutation(order: &[usize]) -> Result<()> {
    let mut seen = vec![false; order.len()];
    for &i in order {
        if i >= order.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("{order:?} is not a permutation")));
        }
    }
    Ok(())
}

/// Inner-loop step size: `β` or `β·λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStepRule {
    #[default]
    Beta,
    BetaLambda,
}

/// Number of inner iterations per outer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSchedule {
    /// Always `N`.
    #[default]
    Fixed,
    /// `N + ⌈log₂(1 + α·t)⌉`, growing logarithmically with the outer step.
    Logarithmic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub inner_steps: usize,
    pub inner_rule: InnerStepRule,
    pub inner_schedule: InnerSchedule,
    pub upper: UpperLevelConfig,
    pub normalization: NormalizationMode,
    pub epoch_length: usize,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            alpha: 1e-3,
            beta: 1e-2,
            inner_steps: 50,
            inner_rule: InnerStepRule::Beta,
            inner_schedule: InnerSchedule::Fixed,
            upper: UpperLevelConfig::default(),
            normalization: NormalizationMode::None,
            epoch_length: DEFAULT_EPOCH_LENGTH,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(
                    name,
                    format!("must be positive, got {v}"),
                ))
            }
        };
        positive("lambda", self.lambda)?;
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        if self.inner_steps == 0 {
            return Err(Error::validation("inner_steps", "must be at least 1"));
        }
        if self.epoch_length == 0 {
            return Err(Error::validation("epoch_length", "must be at least 1"));
        }
        if let Some(o) = &self.upper.task_order {
            validate_permutation(o).map_err(|e| Error::validation("task_order", e.to_string()))?;
        }
        Ok(())
    }

    pub fn beta_eff(&self) -> f64 {
        match self.inner_rule {
            InnerStepRule::Beta => self.beta,
            InnerStepRule::BetaLambda => self.beta * self.lambda,
        }
    }

    pub fn inner_steps_at(&self, t: usize) -> usize {
        match self.inner_schedule {
            InnerSchedule::Fixed => self.inner_steps,
            InnerSchedule::Logarithmic => {
                self.inner_steps + (1.0 + self.alpha * t as f64).log2().ceil() as usize
            }
        }
    }

    pub fn normalization_state(&self, k: usize) -> NormalizationState {
        NormalizationState::new(self.normalization, k).with_epoch_length(self.epoch_length)
    }
}

/// A scalar objective and its partial gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerms {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub grad_w: DVector<f64>,
}

fn check_dims(router: &RouterState, losses: &DVector<f64>, grads: &DMatrix<f64>) -> Result<()> {
    let k = router.num_tasks();
    if losses.len() != k || grads.nrows() != k {
        return Err(Error::invalid(format!(
            "router has {k} tasks, losses {} and gradient rows {}",
            losses.len(),
            grads.nrows()
        )));
    }
    Ok(())
}

/// `g = σᵀl̃`, `∇_x g = G̃ᵀσ`, `∇_W g = J_σᵀ l̃`.
pub fn lower_value_and_grads(
    router: &RouterState,
    losses: &DVector<f64>,
    grads: &DMatrix<f64>,
) -> Result<ObjectiveTerms> {
    check_dims(router, losses, grads)?;
    let s = math::softmax_unchecked(router.logits());
    Ok(lower_terms_with_weights(&s, losses, grads))
}

pub(crate) fn lower_terms_with_weights(
    s: &DVector<f64>,
    losses: &DVector<f64>,
    grads: &DMatrix<f64>,
) -> ObjectiveTerms {
    ObjectiveTerms {
        value: s.dot(losses),
        grad_x: grads.tr_mul(s),
        grad_w: math::softmax_vjp(s, losses),
    }
}

/// Smoothed sum of adjacent weighted-loss gaps and its gradients.
pub fn upper_value_and_grads(
    router: &RouterState,
    losses: &DVector<f64>,
    grads: &DMatrix<f64>,
    cfg: &UpperLevelConfig,
) -> Result<ObjectiveTerms> {
    check_dims(router, losses, grads)?;
    let k = router.num_tasks();
    if k < 2 {
        return Err(Error::invalid("the gap objective needs at least two tasks"));
    }
    let order = cfg.order(k)?;
    let s = math::softmax_unchecked(router.logits());
    Ok(upper_terms_with_weights(&s, losses, grads, cfg, &order))
}

pub(crate) fn upper_terms_with_weights(
    s: &DVector<f64>,
    losses: &DVector<f64>,
    grads: &DMatrix<f64>,
    cfg: &UpperLevelConfig,
    order: &[usize],
) -> ObjectiveTerms {
    let k = losses.len();
    let tau = |task: usize| match cfg.tau {
        TauMode::Ones => 1.0,
        TauMode::Sigma => s[task],
    };
    // slope[j] accumulates ±s'(d_i) over the gaps that task j takes part in.
    let mut slope = DVector::zeros(k);
    let mut value = 0.0;
    for pair in order.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let d = tau(a) * losses[a] - tau(b) * losses[b];
        value += soft_abs(d, cfg.gamma);
        let ds = soft_abs_grad(d, cfg.gamma);
        slope[a] += ds;
        slope[b] -= ds;
    }
    let coeff = DVector::from_fn(k, |j, _| slope[j] * tau(j));
    let grad_x = grads.tr_mul(&coeff);
    let grad_w = match cfg.tau {
        TauMode::Ones => DVector::zeros(k),
        TauMode::Sigma => math::softmax_vjp(s, &slope.component_mul(losses)),
    };
    ObjectiveTerms {
        value,
        grad_x,
        grad_w,
    }
}

/// How the lower-level minimizer `x*(W)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowerSolver {
    /// Closed form from the suite.
    Exact,
    /// Plain gradient descent on `g(W, ·)` warm-started at the current `x`.
    InnerLoop { beta_eff: f64, steps: usize },
}

/// Losses and gradients after normalization with a frozen baseline.
pub fn normalized_eval(
    suite: &dyn TaskSuite,
    norm: &NormalizationState,
    x: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let e = suite.evaluate(x);
    norm.normalize(&e.losses, &e.grads)
}

/// Minimizer of `Σ σ_i l̃_i(x)` for the current router and frozen normalization.
pub fn lower_level_minimizer(
    router: &RouterState,
    x: &DVector<f64>,
    suite: &dyn TaskSuite,
    norm: &NormalizationState,
    solver: LowerSolver,
) -> Result<DVector<f64>> {
    let s = math::softmax_unchecked(router.logits());
    match solver {
        LowerSolver::Exact => {
            let w = match norm.mode() {
                NormalizationMode::None => s,
                NormalizationMode::Rescale => {
                    let w = s.component_div(norm.baseline());
                    let total = w.sum();
                    w / total
                }
                NormalizationMode::Log => {
                    return Err(Error::config(
                        "log normalization has no closed-form lower-level solution",
                    ))
                }
            };
            suite.lower_level_solution(&w).ok_or_else(|| {
                Error::config(format!(
                    "suite {} has no closed-form lower-level solution and no inner-loop budget",
                    suite.name()
                ))
            })
        }
        LowerSolver::InnerLoop { beta_eff, steps } => {
            inner_z_loop(router, x, suite, norm, beta_eff, steps)
        }
    }
}

/// `p(W,x) = g(W,x) − g(W,x*)`.
pub fn penalty_value(
    router: &RouterState,
    x: &DVector<f64>,
    suite: &dyn TaskSuite,
    norm: &NormalizationState,
    solver: LowerSolver,
) -> Result<f64> {
    let x_star = lower_level_minimizer(router, x, suite, norm, solver)?;
    let s = math::softmax_unchecked(router.logits());
    let (l, _) = normalized_eval(suite, norm, x);
    let (l_star, _) = normalized_eval(suite, norm, &x_star);
    Ok(s.dot(&l) - s.dot(&l_star))
}

/// Squared norm of `∇f + λ(∇g(W,x) − ∇g(W,x*))` over both the `W` and `x` blocks.
///
/// With an exact `x*` the term `∇_x g(W,x*)` is zero by optimality and is
/// dropped.
pub fn stationarity_residual(
    router: &RouterState,
    x: &DVector<f64>,
    suite: &dyn TaskSuite,
    norm: &NormalizationState,
    cfg: &BilevelConfig,
    solver: LowerSolver,
) -> Result<f64> {
    let x_star = lower_level_minimizer(router, x, suite, norm, solver)?;
    let (l, g) = normalized_eval(suite, norm, x);
    let (l_star, g_star) = normalized_eval(suite, norm, &x_star);
    let upper = upper_value_and_grads(router, &l, &g, &cfg.upper)?;
    let lower = lower_value_and_grads(router, &l, &g)?;
    let at_star = lower_value_and_grads(router, &l_star, &g_star)?;
    let lambda = cfg.lambda;
    let w_block = &upper.grad_w + (&lower.grad_w - &at_star.grad_w) * lambda;
    let x_block = match solver {
        LowerSolver::Exact => &upper.grad_x + &lower.grad_x * lambda,
        LowerSolver::InnerLoop { .. } => &upper.grad_x + (&lower.grad_x - &at_star.grad_x) * lambda,
    };
    Ok(w_block.norm_squared() + x_block.norm_squared())
}
