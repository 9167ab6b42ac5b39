//! Evaluation quantities computed from losses, gradients and external metric tables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::min_norm_weights;

/// Norms below this are treated as zero.
pub const NORM_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// One direction flag per metric column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricDirections(pub Vec<Direction>);

impl MetricDirections {
    pub fn new(dirs: Vec<Direction>) -> Self {
        Self(dirs)
    }

    /// All columns lower-is-better, as for raw losses.
    pub fn all_lower(k: usize) -> Self {
        Self(vec![Direction::LowerBetter; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Average relative drop of `multi` against `single`, in percent.
///
/// Each column contributes `−(M_m − M_b)/M_b` when higher is better and
/// `+(M_m − M_b)/M_b` when lower is better, so a negative result means the
/// multi-task model is better on average.
pub fn delta_m(multi: &[f64], single: &[f64], dirs: &MetricDirections) -> Result<f64> {
    let k = multi.len();
    if single.len() != k || dirs.len() != k {
        return Err(Error::invalid(format!(
            "delta_m needs equal lengths, got {k}, {} and {}",
            single.len(),
            dirs.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("delta_m needs at least one metric"));
    }
    let mut total = 0.0;
    for i in 0..k {
        if single[i] == 0.0 {
            return Err(Error::invalid(format!("baseline metric {i} is zero")));
        }
        let rel = (multi[i] - single[i]) / single[i];
        total += match dirs.0[i] {
            Direction::HigherBetter => -rel,
            Direction::LowerBetter => rel,
        };
    }
    Ok(total / k as f64 * 100.0)
}

/// `min_{w ∈ simplex} ‖Gᵀw‖²`.
pub fn pareto_residual(grads: &DMatrix<f64>) -> f64 {
    min_norm_weights(grads).residual
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn loss_stats(losses: &[f64]) -> Result<LossStats> {
    if losses.is_empty() {
        return Err(Error::invalid("loss_stats needs at least one loss"));
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LossStats {
        // Rounding can push the mean a hair outside [min, max].
        mean: mean.clamp(min, max),
        std: var.sqrt(),
        min,
        max,
    })
}

/// Pairwise cosine similarity of gradient rows; rows with norm below
/// [`NORM_FLOOR`] get zero entries, including on the diagonal.
pub fn grad_cosine_matrix(grads: &DMatrix<f64>) -> DMatrix<f64> {
    let k = grads.nrows();
    let norms: Vec<f64> = grads.row_iter().map(|r| r.norm()).collect();
    let mut c = DMatrix::zeros(k, k);
    for i in 0..k {
        if norms[i] < NORM_FLOOR {
            continue;
        }
        c[(i, i)] = 1.0;
        for j in (i + 1)..k {
            if norms[j] < NORM_FLOOR {
                continue;
            }
            let v = (grads.row(i).dot(&grads.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// `‖at_x‖ / max(‖at_z‖, 1e-15)`.
pub fn norm_ratio(at_x: &DVector<f64>, at_z: &DVector<f64>) -> f64 {
    norm_ratio_checked(at_x, at_z).0
}

/// [`norm_ratio`] together with whether the denominator was floored.
pub fn norm_ratio_checked(at_x: &DVector<f64>, at_z: &DVector<f64>) -> (f64, bool) {
    let den = at_z.norm();
    let capped = den < NORM_FLOOR;
    (at_x.norm() / den.max(NORM_FLOOR), capped)
}
