//! Multi-task objectives with analytic gradients.
//!
//! A [`TaskSuite`] maps a parameter vector `x ∈ R^d` to `K` task losses and the
//! `K × d` matrix whose `i`-th row is `∇l_i(x)`. Quadratic suites also expose
//! the exact minimizer of any weighted sum of their losses.

mod normalize;
mod quad;
mod scaled;
mod toy2;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use normalize::{NormalizationMode, NormalizationState, DEFAULT_EPOCH_LENGTH, LOSS_FLOOR};
pub use quad::{QuadSpec, QuadSuite};
pub use scaled::{scaled_suite, ScaledSuite};
pub use toy2::{toy2_clamp_margin, toy2_eval, Toy2, TOY2_LOG_FLOOR};

/// Losses and their gradient matrix at one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub losses: DVector<f64>,
    /// `K × d`, row `i` is the gradient of task `i`.
    pub grads: DMatrix<f64>,
}

impl Evaluation {
    pub fn is_finite(&self) -> bool {
        self.losses.iter().all(|v| v.is_finite()) && self.grads.iter().all(|v| v.is_finite())
    }
}

/// Curvature bounds of a suite whose losses are uniformly strongly convex and smooth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureBounds {
    /// Smallest Hessian eigenvalue over all tasks.
    pub mu_min: f64,
    /// Largest Hessian eigenvalue over all tasks.
    pub l_max: f64,
}

pub trait TaskSuite: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn num_tasks(&self) -> usize;

    fn dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation;

    fn losses(&self, x: &DVector<f64>) -> DVector<f64> {
        self.evaluate(x).losses
    }

    /// Exact minimizer of `Σ w_i l_i(x)` when one is available in closed form.
    fn lower_level_solution(&self, _weights: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    fn curvature(&self) -> Option<CurvatureBounds> {
        None
    }

    /// Parameter-space point of the analytic Pareto front for two-task suites,
    /// parameterized by the weight `w` on the first task.
    fn pareto_front_point(&self, w: f64) -> Option<DVector<f64>> {
        if self.num_tasks() != 2 || !(0.0..=1.0).contains(&w) {
            return None;
        }
        self.lower_level_solution(&DVector::from_row_slice(&[w, 1.0 - w]))
    }
}

pub type SharedSuite = Arc<dyn TaskSuite>;
