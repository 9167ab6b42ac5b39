//! Minimum-norm point of the convex hull of task gradients.

use nalgebra::{DMatrix, DVector};

use crate::math::SimplexWeights;

pub const FW_MAX_ITERS: usize = 2000;
pub const FW_GAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MinNorm {
    pub weights: SimplexWeights,
    /// `‖Gᵀw‖²`.
    pub residual: f64,
    pub iterations: usize,
}

/// Weights `w` on the simplex minimizing `‖Gᵀw‖²` for the `K × d` matrix `G`.
///
/// `K = 2` uses the exact line-search solution; larger `K` runs away-step
/// Frank–Wolfe on the Gram matrix, stopping when the duality gap drops below
/// [`FW_GAP_TOL`] or after [`FW_MAX_ITERS`] iterations.
pub fn min_norm_weights(grads: &DMatrix<f64>) -> MinNorm {
    let k = grads.nrows();
    let (w, iterations) = match k {
        0 => (DVector::zeros(0), 0),
        1 => (DVector::from_element(1, 1.0), 0),
        2 => (two_task_weights(grads), 0),
        _ => frank_wolfe(&(grads * grads.transpose())),
    };
    let residual = if k == 0 {
        0.0
    } else {
        grads.tr_mul(&w).norm_squared()
    };
    MinNorm {
        weights: SimplexWeights::from_raw_unchecked(w),
        residual,
        iterations,
    }
}

/// Minimizer of `‖w g1 + (1−w) g2‖²` over `w ∈ [0, 1]`.
fn two_task_weights(grads: &DMatrix<f64>) -> DVector<f64> {
    let g1 = grads.row(0);
    let g2 = grads.row(1);
    let diff = g1 - g2;
    let denom = diff.norm_squared();
    let w = if denom <= f64::MIN_POSITIVE {
        0.5
    } else {
        (-(diff.dot(&g2)) / denom).clamp(0.0, 1.0)
    };
    DVector::from_row_slice(&[w, 1.0 - w])
}

/// Away-step Frank–Wolfe on a Gram matrix; returns the weights and iteration count.
pub fn frank_wolfe(gram: &DMatrix<f64>) -> (DVector<f64>, usize) {
    let k = gram.nrows();
    let start = (0..k)
        .min_by(|&a, &b| gram[(a, a)].total_cmp(&gram[(b, b)]))
        .unwrap_or(0);
    let mut w = DVector::zeros(k);
    w[start] = 1.0;
    let mut mw: DVector<f64> = gram.column(start).into_owned();

    let mut iterations = 0;
    while iterations < FW_MAX_ITERS {
        iterations += 1;
        let wmw = w.dot(&mw);
        let toward = mw.imin();
        let away = (0..k)
            .filter(|&i| w[i] > 0.0)
            .max_by(|&a, &b| mw[a].total_cmp(&mw[b]))
            .unwrap_or(toward);
        // Duality gap of f(w) = wᵀMw with ∇f = 2Mw.
        let fw_gap = 2.0 * (wmw - mw[toward]);
        if fw_gap <= FW_GAP_TOL {
            break;
        }
        let away_gap = 2.0 * (mw[away] - wmw);

        if fw_gap >= away_gap || w[away] >= 1.0 {
            // d = e_s − w
            let dmw = mw[toward] - wmw;
            let dmd = gram[(toward, toward)] - 2.0 * mw[toward] + wmw;
            let gamma = if dmd > 0.0 {
                (-dmw / dmd).clamp(0.0, 1.0)
            } else {
                1.0
            };
            w *= 1.0 - gamma;
            w[toward] += gamma;
            mw = mw * (1.0 - gamma) + gram.column(toward) * gamma;
        } else {
            // d = w − e_v, feasible up to γ = w_v / (1 − w_v)
            let gamma_max = w[away] / (1.0 - w[away]);
            let dmw = wmw - mw[away];
            let dmd = wmw - 2.0 * mw[away] + gram[(away, away)];
            let gamma = if dmd > 0.0 {
                (-dmw / dmd).clamp(0.0, gamma_max)
            } else {
                gamma_max
            };
            w *= 1.0 + gamma;
            w[away] -= gamma;
            if gamma >= gamma_max {
                w[away] = 0.0;
            }
            mw = mw * (1.0 + gamma) - gram.column(away) * gamma;
        }
        // Pull the iterate back onto the simplex against rounding drift.
        if iterations % 64 == 0 {
            w.iter_mut().for_each(|v| *v = v.max(0.0));
            let s = w.sum();
            w /= s;
            mw = gram * &w;
        }
    }
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = w.sum();
    w /= s;
    (w, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(data: &[&[f64]]) -> DMatrix<f64> {
        let d = data[0].len();
        DMatrix::from_fn(data.len(), d, |i, j| data[i][j])
    }

    #[test]
    fn orthogonal_unit_pair() {
        let r = min_norm_weights(&rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert!((r.weights[0] - 0.5).abs() < 1e-15);
        assert!((r.residual - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unequal_pair_closed_form() {
        // minimize 4w² + (1−w)²  →  w = 0.2, value 0.8
        let r = min_norm_weights(&rows(&[&[2.0, 0.0], &[0.0, 1.0]]));
        assert!((r.weights[0] - 0.2).abs() < 1e-15);
        assert!((r.residual - 0.8).abs() < 1e-15);
    }

    #[test]
    fn identical_gradients() {
        let r = min_norm_weights(&rows(&[&[1.0, 2.0], &[1.0, 2.0]]));
        assert!((r.residual - 5.0).abs() < 1e-15);
        let r = min_norm_weights(&rows(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]));
        assert!((r.residual - 5.0).abs() < 1e-12);
    }

    #[test]
    fn opposing_gradients_reach_origin() {
        let r = min_norm_weights(&rows(&[&[1.0, -3.0], &[-1.0, 3.0]]));
        assert!(r.residual < 1e-30);
    }

    #[test]
    fn three_task_symmetric() {
        // Vertices of an equilateral triangle centered at the origin.
        let s = 3f64.sqrt() / 2.0;
        let r = min_norm_weights(&rows(&[&[1.0, 0.0], &[-0.5, s], &[-0.5, -s]]));
        assert!(r.residual < 1e-12);
        for i in 0..3 {
            assert!((r.weights[i] - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn weights_stay_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let k = rng.gen_range(1..8);
            let g = DMatrix::from_fn(k, 3, |_, _| rng.gen_range(-1.0..1.0));
            let r = min_norm_weights(&g);
            assert!(SimplexWeights::new(r.weights.as_vector().clone()).is_ok());
        }
    }

    #[test]
    fn closed_form_agrees_with_frank_wolfe() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let g = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
            let closed = min_norm_weights(&g).residual;
            let (w, _) = frank_wolfe(&(&g * g.transpose()));
            let fw = g.tr_mul(&w).norm_squared();
            assert!((closed - fw).abs() <= 1e-8, "{closed} vs {fw}");
        }
    }
}
