//! Numerical primitives shared by every other module: softmax and its
//! Jacobian, the smoothed absolute value, Euclidean projection onto the
//! probability simplex and a central-difference gradient oracle.
//!
//! Everything here is a pure function of its arguments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the component sum of a [`SimplexWeights`].
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

/// A point of the probability simplex: nonnegative components summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(DVector<f64>);

impl SimplexWeights {
    /// Validates `w` against the simplex invariants.
    pub fn new(w: DVector<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid(
                "simplex weights need at least one component",
            ));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "weight {i} = {} is negative or not finite",
                w[i]
            )));
        }
        let sum = w.sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        Self(DVector::from_element(k, 1.0 / k as f64))
    }

    /// The `i`-th vertex `e_i` of the `k`-simplex.
    pub fn vertex(k: usize, i: usize) -> Self {
        let mut w = DVector::zeros(k);
        w[i] = 1.0;
        Self(w)
    }

    pub(crate) fn from_raw_unchecked(w: DVector<f64>) -> Self {
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(v))
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Vec<f64> {
        w.0.as_slice().to_vec()
    }
}

/// Smoothing constant of the soft absolute value `√(d² + γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SoftAbsParams {
    gamma: f64,
}

impl SoftAbsParams {
    /// Default smoothing used for training.
    pub const TRAINING: f64 = 1e-8;
    /// Looser smoothing used for gradient checks.
    pub const GRADCHECK: f64 = 1e-4;

    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for SoftAbsParams {
    fn default() -> Self {
        Self {
            gamma: Self::TRAINING,
        }
    }
}

impl TryFrom<f64> for SoftAbsParams {
    type Error = Error;
    fn try_from(g: f64) -> Result<Self> {
        Self::new(g)
    }
}

impl From<SoftAbsParams> for f64 {
    fn from(p: SoftAbsParams) -> f64 {
        p.gamma
    }
}

fn ensure_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{what} must be non-empty")));
    }
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::invalid(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &DVector<f64>) -> Result<SimplexWeights> {
    ensure_finite(logits, "logits")?;
    Ok(SimplexWeights(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let mut e = logits.map(|l| (l - max).exp());
    let s = e.sum();
    e /= s;
    e
}

/// `diag(σ) − σσᵀ` for `σ = softmax(logits)`.
pub fn softmax_jacobian(logits: &DVector<f64>) -> Result<DMatrix<f64>> {
    let s = softmax(logits)?;
    Ok(jacobian_from_weights(s.as_vector()))
}

pub(crate) fn jacobian_from_weights(s: &DVector<f64>) -> DMatrix<f64> {
    let mut j = -(s * s.transpose());
    for i in 0..s.len() {
        j[(i, i)] += s[i];
    }
    j
}

/// Product `J_σᵀ v = σ ∘ (v − σᵀv)` without forming the Jacobian.
pub(crate) fn softmax_vjp(s: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mean = s.dot(v);
    s.zip_map(v, |si, vi| si * (vi - mean))
}

/// `√(d² + γ)`.
pub fn soft_abs(d: f64, p: SoftAbsParams) -> f64 {
    (d * d + p.gamma).sqrt()
}

/// `d / √(d² + γ)`, the derivative of [`soft_abs`].
pub fn soft_abs_grad(d: f64, p: SoftAbsParams) -> f64 {
    d / (d * d + p.gamma).sqrt()
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &DVector<f64>) -> Result<SimplexWeights> {
    ensure_finite(v, "v")?;
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    Ok(SimplexWeights(v.map(|vi| (vi - theta).max(0.0))))
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + h;
        let up = f(&probe);
        probe[i] = xi - h;
        let down = f(&probe);
        probe[i] = xi;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Evaluation { coordinate: i });
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&dv(&[0.0, 0.0, 0.0])).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(s[i], 1.0 / 3.0, epsilon = 1e-15);
        }
        let s = softmax(&dv(&[2f64.ln(), 0.0])).unwrap();
        assert_abs_diff_eq!(s[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 1.0 / 3.0, epsilon = 1e-15);
        let s = softmax(&dv(&[1000.0, 0.0])).unwrap();
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-15);
        assert!(s[1] >= 0.0 && s[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax(&dv(&[0.0, f64::NAN])),
            Err(Error::InvalidInput(_))
        ));
        assert!(softmax(&dv(&[f64::INFINITY])).is_err());
        assert!(softmax_jacobian(&dv(&[f64::NEG_INFINITY, 0.0])).is_err());
    }

    #[test]
    fn jacobian_uniform_two() {
        let j = softmax_jacobian(&dv(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(0, 1)], -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(1, 0)], -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(1, 1)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let logits = dv(&[1.0, 0.0, -1.0]);
        let j = softmax_jacobian(&logits).unwrap();
        for i in 0..3 {
            let fd = finite_diff_grad(|l| softmax_unchecked(l)[i], &logits, 1e-5).unwrap();
            for k in 0..3 {
                assert_abs_diff_eq!(j[(i, k)], fd[k], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn vjp_agrees_with_dense_jacobian() {
        let logits = dv(&[0.3, -1.2, 2.0, 0.1]);
        let s = softmax_unchecked(&logits);
        let v = dv(&[1.0, -2.0, 0.5, 3.0]);
        let dense = jacobian_from_weights(&s).transpose() * &v;
        let fast = softmax_vjp(&s, &v);
        assert_abs_diff_eq!((dense - fast).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn soft_abs_examples() {
        let p = SoftAbsParams::new(1e-8).unwrap();
        assert_abs_diff_eq!(soft_abs(0.0, p), 1e-4, epsilon = 1e-18);
        assert_eq!(soft_abs_grad(0.0, p), 0.0);
        assert_abs_diff_eq!(soft_abs(3.0, p), 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(soft_abs_grad(3.0, p), 1.0, epsilon = 1e-8);
        assert_eq!(soft_abs(-3.0, p), soft_abs(3.0, p));
        assert_eq!(soft_abs_grad(-3.0, p), -soft_abs_grad(3.0, p));
    }

    #[test]
    fn soft_abs_params_reject_nonpositive() {
        assert!(SoftAbsParams::new(0.0).is_err());
        assert!(SoftAbsParams::new(-1e-8).is_err());
        assert!(SoftAbsParams::new(f64::NAN).is_err());
    }

    #[test]
    fn projection_examples() {
        let w = project_simplex(&dv(&[0.6, 0.6])).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
        let w = project_simplex(&dv(&[1.2, -0.2])).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-15);
        let on = dv(&[0.2, 0.3, 0.5]);
        let w = project_simplex(&on).unwrap();
        assert_abs_diff_eq!((w.as_vector() - &on).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_two_component_qp_oracle() {
        // Minimizing (w - 1.2)^2 + (1 - w + 0.2)^2 over w in [0, 1] by dense scan.
        let best = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .min_by(|a, b| {
                let fa = (a - 1.2).powi(2) + (1.0 - a + 0.2).powi(2);
                let fb = (b - 1.2).powi(2) + (1.0 - b + 0.2).powi(2);
                fa.total_cmp(&fb)
            })
            .unwrap();
        let w = project_simplex(&dv(&[1.2, -0.2])).unwrap();
        assert_abs_diff_eq!(w[0], best, epsilon = 1e-5);
    }

    #[test]
    fn finite_diff_examples() {
        let x = dv(&[1.0, 2.0]);
        let g = finite_diff_grad(|v| 0.5 * v.norm_squared(), &x, 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 2.0, epsilon = 1e-8);
        let g = finite_diff_grad(|_| 7.0, &x, 1e-5).unwrap();
        assert_abs_diff_eq!(g.norm(), 0.0, epsilon = 1e-10);
        let g = finite_diff_grad(|v| v[0] * v[1], &dv(&[3.0, 4.0]), 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn finite_diff_reports_coordinate() {
        let x = dv(&[1.0, 0.0]);
        let err =
            finite_diff_grad(|v| if v[1] > 0.0 { f64::NAN } else { 0.0 }, &x, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Evaluation { coordinate: 1 }));
        assert!(finite_diff_grad(|v| v[0], &x, 0.0).is_err());
    }

    #[test]
    fn simplex_weights_validation() {
        assert!(SimplexWeights::new(dv(&[0.5, 0.6])).is_err());
        assert!(SimplexWeights::new(dv(&[-0.1, 1.1])).is_err());
        assert!(SimplexWeights::new(dv(&[])).is_err());
        assert!(SimplexWeights::new(dv(&[0.25, 0.75])).is_ok());
        let w: SimplexWeights = serde_json::from_str("[0.5, 0.5]").unwrap();
        assert_eq!(w.len(), 2);
        assert!(serde_json::from_str::<SimplexWeights>("[0.5, 0.6]").is_err());
    }

    proptest! {
        #[test]
        fn softmax_on_simplex_for_extreme_logits(
            logits in prop::collection::vec(-1e6f64..1e6, 1..12)
        ) {
            let s = softmax(&DVector::from_vec(logits)).unwrap();
            prop_assert!(s.as_slice().iter().all(|v| *v >= 0.0));
            prop_assert!((s.as_vector().sum() - 1.0).abs() <= SIMPLEX_SUM_TOL);
        }

        #[test]
        fn softmax_shift_invariant(
            logits in prop::collection::vec(-20_000_000i64..20_000_000, 1..8),
            shift in -50i32..50,
        ) {
            // Dyadic logits and integer shifts keep the shifted input exact, so
            // any difference comes from the softmax itself.
            let l = DVector::from_iterator(logits.len(), logits.iter().map(|&v| v as f64 / 1048576.0));
            let shift = f64::from(shift);
            let a = softmax(&l).unwrap();
            let b = softmax(&l.add_scalar(shift)).unwrap();
            for i in 0..l.len() {
                prop_assert!((a[i] - b[i]).abs() <= 1e-15);
            }
        }

        #[test]
        fn jacobian_rows_sum_to_zero_and_symmetric(
            logits in prop::collection::vec(-10f64..10.0, 1..10)
        ) {
            let j = softmax_jacobian(&DVector::from_vec(logits)).unwrap();
            for i in 0..j.nrows() {
                prop_assert!(j.row(i).sum().abs() <= 1e-12);
                for k in 0..j.ncols() {
                    prop_assert_eq!(j[(i, k)], j[(k, i)]);
                }
            }
        }

        #[test]
        fn soft_abs_grad_matches_fd(d in -10f64..10.0, loose in any::<bool>()) {
            let p = SoftAbsParams::new(if loose { 1e-4 } else { 1e-8 }).unwrap();
            // Step scaled to the local curvature radius of the smoothed kink.
            let h = (5e-4 * soft_abs(d, p)).min(1e-5);
            let fd = finite_diff_grad(|v| soft_abs(v[0], p), &DVector::from_element(1, d), h).unwrap();
            prop_assert!((fd[0] - soft_abs_grad(d, p)).abs() <= 1e-7);
        }

        #[test]
        fn projection_is_idempotent_and_feasible(v in prop::collection::vec(-5f64..5.0, 1..9)) {
            let w = project_simplex(&DVector::from_vec(v)).unwrap();
            prop_assert!(w.as_slice().iter().all(|x| *x >= 0.0));
            prop_assert!((w.as_vector().sum() - 1.0).abs() <= 1e-9);
            let again = project_simplex(w.as_vector()).unwrap();
            prop_assert!((again.as_vector() - w.as_vector()).norm() <= 1e-12);
        }
    }
}
