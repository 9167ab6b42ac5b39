//! Central finite-difference checks of every analytic gradient.

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{finite_diff_grad, SoftAbsParams};
use crate::objective::{
    lower_value_and_grads, upper_value_and_grads, RouterState, TauMode, UpperLevelConfig,
};
use crate::par;
use crate::suites::{toy2_clamp_margin, TaskSuite};

pub const FD_STEP: f64 = 1e-6;
pub const GRADCHECK_TOL: f64 = 1e-5;
pub const DEFAULT_POINTS: usize = 100;
/// Toy points closer than this to a clamp boundary are resampled.
pub const TOY_CLAMP_MARGIN: f64 = 1e-3;

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1)`.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).amax();
    diff / a.amax().max(b.amax()).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Every row of the suite's gradient matrix.
    TaskGrads,
    GradXF(TauMode),
    GradWF(TauMode),
    GradXG,
    GradWG,
}

impl Target {
    pub const ALL: [Target; 7] = [
        Target::TaskGrads,
        Target::GradXF(TauMode::Ones),
        Target::GradXF(TauMode::Sigma),
        Target::GradWF(TauMode::Ones),
        Target::GradWF(TauMode::Sigma),
        Target::GradXG,
        Target::GradWG,
    ];

    pub fn label(&self) -> String {
        let tau = |t: &TauMode| match t {
            TauMode::Ones => "ones",
            TauMode::Sigma => "sigma",
        };
        match self {
            Target::TaskGrads => "task_grads".into(),
            Target::GradXF(t) => format!("grad_x_f[tau={}]", tau(t)),
            Target::GradWF(t) => format!("grad_w_f[tau={}]", tau(t)),
            Target::GradXG => "grad_x_g".into(),
            Target::GradWG => "grad_w_g".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub suite: String,
    pub target: String,
    pub tasks: usize,
    pub points: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn sample_point(suite: &dyn TaskSuite, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let d = suite.dim();
    if suite.name() == "toy2" {
        loop {
            let x = Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            if toy2_clamp_margin(&x) >= TOY_CLAMP_MARGIN {
                return DVector::from_column_slice(x.as_slice());
            }
        }
    }
    DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0))
}

fn check_point(
    suite: &dyn TaskSuite,
    target: Target,
    x: &DVector<f64>,
    logits: &DVector<f64>,
) -> Result<f64> {
    let gamma = SoftAbsParams::new(SoftAbsParams::GRADCHECK)?;
    let upper = |tau| UpperLevelConfig {
        tau,
        gamma,
        task_order: None,
    };
    let router = RouterState::new(logits.clone())?;
    let e = suite.evaluate(x);
    match target {
        Target::TaskGrads => {
            let mut worst = 0.0f64;
            for i in 0..suite.num_tasks() {
                let fd = finite_diff_grad(|z| suite.losses(z)[i], x, FD_STEP)?;
                let a = e.grads.row(i).transpose();
                worst = worst.max(relative_error(&a, &fd));
            }
            Ok(worst)
        }
        Target::GradXF(tau) => {
            let cfg = upper(tau);
            let a = upper_value_and_grads(&router, &e.losses, &e.grads, &cfg)?.grad_x;
            let fd = finite_diff_grad(
                |z| {
                    let ez = suite.evaluate(z);
                    upper_value_and_grads(&router, &ez.losses, &ez.grads, &cfg)
                        .map_or(f64::NAN, |t| t.value)
                },
                x,
                FD_STEP,
            )?;
            Ok(relative_error(&a, &fd))
        }
        Target::GradWF(tau) => {
            let cfg = upper(tau);
            let a = upper_value_and_grads(&router, &e.losses, &e.grads, &cfg)?.grad_w;
            let fd = finite_diff_grad(
                |w| {
                    RouterState::new(w.clone())
                        .and_then(|r| upper_value_and_grads(&r, &e.losses, &e.grads, &cfg))
                        .map_or(f64::NAN, |t| t.value)
                },
                logits,
                FD_STEP,
            )?;
            Ok(relative_error(&a, &fd))
        }
        Target::GradXG => {
            let a = lower_value_and_grads(&router, &e.losses, &e.grads)?.grad_x;
            let fd = finite_diff_grad(
                |z| {
                    let ez = suite.evaluate(z);
                    lower_value_and_grads(&router, &ez.losses, &ez.grads)
                        .map_or(f64::NAN, |t| t.value)
                },
                x,
                FD_STEP,
            )?;
            Ok(relative_error(&a, &fd))
        }
        Target::GradWG => {
            let a = lower_value_and_grads(&router, &e.losses, &e.grads)?.grad_w;
            let fd = finite_diff_grad(
                |w| {
                    RouterState::new(w.clone())
                        .and_then(|r| lower_value_and_grads(&r, &e.losses, &e.grads))
                        .map_or(f64::NAN, |t| t.value)
                },
                logits,
                FD_STEP,
            )?;
            Ok(relative_error(&a, &fd))
        }
    }
}

/// Checks every target of [`Target::ALL`] at `points` random `(x, W)` pairs.
/// Point `i` draws from its own stream of `seed`, so results do not depend on
/// the thread count.
pub fn gradcheck_suite(
    suite: &dyn TaskSuite,
    points: usize,
    seed: u64,
) -> Result<Vec<GradCheckResult>> {
    if points == 0 {
        return Err(Error::config("gradcheck needs at least one point"));
    }
    let k = suite.num_tasks();
    let samples: Vec<(DVector<f64>, DVector<f64>)> = (0..points)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x = sample_point(suite, &mut rng);
            let w = DVector::from_fn(k, |_, _| rng.gen_range(-2.0..2.0));
            (x, w)
        })
        .collect();
    let targets: Vec<Target> = Target::ALL
        .into_iter()
        .filter(|t| k >= 2 || matches!(t, Target::TaskGrads | Target::GradXG | Target::GradWG))
        .collect();
    targets
        .iter()
        .map(|&target| {
            let errs = par::map(&samples, |(x, w)| check_point(suite, target, x, w));
            let worst = errs
                .into_iter()
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0f64, |a, e| if e.is_nan() { f64::NAN } else { a.max(e) });
            Ok(GradCheckResult {
                suite: suite.name().to_string(),
                target: target.label(),
                tasks: k,
                points,
                max_rel_error: worst,
                passed: worst <= GRADCHECK_TOL,
            })
        })
        .collect()
}
