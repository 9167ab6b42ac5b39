//! The two-task toy landscape: a log-shaped upper region (`x₂ > 0`) and a
//! quadratic lower region (`x₂ < 0`), blended by clamped `tanh` gates.
//!
//! ```text
//! L1 = 0.1·(c1·f1 + c2·g1)        L2 = c1·f2 + c2·g2
//! f1 = ln max(|0.5(−x1−7) − tanh(−x2)|,     5e-6) + 6
//! f2 = ln max(|0.5(−x1+3) − tanh(−x2) + 2|, 5e-6) + 6
//! g1 = ((−x1+7)² + 0.1(−x2−8)²)/10 − 20
//! g2 = ((−x1−7)² + 0.1(−x2−8)²)/10 − 20
//! c1 = max(tanh(0.5·x2), 0)     c2 = max(tanh(−0.5·x2), 0)
//! ```
//!
//! Clamped branches carry derivative 0. At a tie (argument exactly on the
//! threshold) the unclamped branch's derivative is used.

use nalgebra::{DMatrix, DVector, Vector2};

use super::{Evaluation, TaskSuite};

/// Lower clamp inside the logarithms.
pub const TOY2_LOG_FLOOR: f64 = 0.000005;

/// Value and gradient of `ln max(|u|, floor) + 6` given `u` and `∇u`.
fn clamped_log(u: f64, du: Vector2<f64>) -> (f64, Vector2<f64>) {
    let a = u.abs();
    if a >= TOY2_LOG_FLOOR {
        (a.ln() + 6.0, du * (u.signum() / a))
    } else {
        (TOY2_LOG_FLOOR.ln() + 6.0, Vector2::zeros())
    }
}

/// `max(v, 0)` with derivative `dv` unless clamped.
fn relu(v: f64, dv: Vector2<f64>) -> (f64, Vector2<f64>) {
    if v >= 0.0 {
        (v, dv)
    } else {
        (0.0, Vector2::zeros())
    }
}

/// Losses `(L1, L2)` and the 2×2 gradient matrix (row `i` = `∇L_i`).
pub fn toy2_eval(x: &Vector2<f64>) -> (Vector2<f64>, nalgebra::Matrix2<f64>) {
    let (x1, x2) = (x[0], x[1]);

    // tanh(−x2) and its gradient (0, −sech²(x2)).
    let th = (-x2).tanh();
    let dth = Vector2::new(0.0, -(1.0 - th * th));

    let (f1, df1) = clamped_log(0.5 * (-x1 - 7.0) - th, Vector2::new(-0.5, 0.0) - dth);
    let (f2, df2) = clamped_log(0.5 * (-x1 + 3.0) - th + 2.0, Vector2::new(-0.5, 0.0) - dth);

    let sq = 0.1 * (-x2 - 8.0) * (-x2 - 8.0);
    let dsq = Vector2::new(0.0, 0.2 * (x2 + 8.0));
    let g1 = ((-x1 + 7.0).powi(2) + sq) / 10.0 - 20.0;
    let dg1 = (Vector2::new(2.0 * (x1 - 7.0), 0.0) + dsq) / 10.0;
    let g2 = ((-x1 - 7.0).powi(2) + sq) / 10.0 - 20.0;
    let dg2 = (Vector2::new(2.0 * (x1 + 7.0), 0.0) + dsq) / 10.0;

    let t = (0.5 * x2).tanh();
    let dt = Vector2::new(0.0, 0.5 * (1.0 - t * t));
    let (c1, dc1) = relu(t, dt);
    let (c2, dc2) = relu(-t, -dt);

    let l1 = 0.1 * (c1 * f1 + c2 * g1);
    let dl1 = (dc1 * f1 + df1 * c1 + dc2 * g1 + dg1 * c2) * 0.1;
    let l2 = c1 * f2 + c2 * g2;
    let dl2 = dc1 * f2 + df2 * c1 + dc2 * g2 + dg2 * c2;

    let grads = nalgebra::Matrix2::from_rows(&[dl1.transpose(), dl2.transpose()]);
    (Vector2::new(l1, l2), grads)
}

/// Smallest distance of any clamp argument from its threshold at `x`.
///
/// Finite differences are only meaningful where this is comfortably positive.
pub fn toy2_clamp_margin(x: &Vector2<f64>) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let th = (-x2).tanh();
    let u1 = (0.5 * (-x1 - 7.0) - th).abs() - TOY2_LOG_FLOOR;
    let u2 = (0.5 * (-x1 + 3.0) - th + 2.0).abs() - TOY2_LOG_FLOOR;
    u1.abs().min(u2.abs()).min((0.5 * x2).tanh().abs())
}

/// The toy landscape as a [`TaskSuite`] (`K = 2`, `d = 2`).
#[derive(Debug, Clone, Copy, Default)]
pub struct Toy2;

impl TaskSuite for Toy2 {
    fn name(&self) -> &str {
        "toy2"
    }

    fn num_tasks(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        let (l, g) = toy2_eval(&Vector2::new(x[0], x[1]));
        Evaluation {
            losses: DVector::from_row_slice(l.as_slice()),
            grads: DMatrix::from_fn(2, 2, |i, j| g[(i, j)]),
        }
    }
}
