use nalgebra::DVector;

use super::{CurvatureBounds, Evaluation, SharedSuite, TaskSuite};
use crate::error::{Error, Result};

/// A suite whose `i`-th loss (and gradient row) is multiplied by `scales[i]`.
#[derive(Debug, Clone)]
pub struct ScaledSuite {
    base: SharedSuite,
    scales: DVector<f64>,
    name: String,
}

pub fn scaled_suite(base: SharedSuite, scales: DVector<f64>) -> Result<ScaledSuite> {
    if scales.len() != base.num_tasks() {
        return Err(Error::invalid(format!(
            "{} scales for {} tasks",
            scales.len(),
            base.num_tasks()
        )));
    }
    if let Some(i) = scales.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid(format!("scale {i} must be positive")));
    }
    let name = format!("scaled({})", base.name());
    Ok(ScaledSuite { base, scales, name })
}

impl ScaledSuite {
    pub fn scales(&self) -> &DVector<f64> {
        &self.scales
    }

    pub fn base(&self) -> &SharedSuite {
        &self.base
    }
}

impl TaskSuite for ScaledSuite {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_tasks(&self) -> usize {
        self.base.num_tasks()
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        let mut e = self.base.evaluate(x);
        for (i, s) in self.scales.iter().enumerate() {
            e.losses[i] *= s;
            let mut row = e.grads.row_mut(i);
            row *= *s;
        }
        e
    }

    /// `argmin Σ w_i s_i l_i` is the base minimizer at weights `w ∘ s` renormalized.
    fn lower_level_solution(&self, weights: &DVector<f64>) -> Option<DVector<f64>> {
        if weights.len() != self.scales.len() {
            return None;
        }
        let w = weights.component_mul(&self.scales);
        let total = w.sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        self.base.lower_level_solution(&(w / total))
    }

    fn curvature(&self) -> Option<CurvatureBounds> {
        let c = self.base.curvature()?;
        Some(CurvatureBounds {
            mu_min: c.mu_min * self.scales.min(),
            l_max: c.l_max * self.scales.max(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::pareto_residual;
    use crate::suites::QuadSuite;
    use std::sync::Arc;

    #[test]
    fn unit_scales_are_identity() {
        let base: SharedSuite = Arc::new(QuadSuite::isotropic_1d(&[0.0, 2.0]));
        let s = scaled_suite(base.clone(), DVector::from_element(2, 1.0)).unwrap();
        let x = DVector::from_element(1, 0.7);
        assert_eq!(s.evaluate(&x), base.evaluate(&x));
    }

    #[test]
    fn loss_ratio_scales_linearly() {
        let base: SharedSuite = Arc::new(QuadSuite::isotropic_1d(&[0.0, 3.0]));
        let s = scaled_suite(base.clone(), DVector::from_row_slice(&[1.0, 1000.0])).unwrap();
        let mid = DVector::from_element(1, 1.0);
        let b = base.losses(&mid);
        let l = s.losses(&mid);
        let ratio = (l[1] / l[0]) / (b[1] / b[0]);
        assert!((ratio - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rows_are_exact_multiples() {
        let base: SharedSuite = Arc::new(QuadSuite::isotropic_1d(&[-1.0, 2.0]));
        let scales = DVector::from_row_slice(&[3.0, 0.25]);
        let s = scaled_suite(base.clone(), scales.clone()).unwrap();
        let x = DVector::from_element(1, 0.3);
        let (e, b) = (s.evaluate(&x), base.evaluate(&x));
        for i in 0..2 {
            assert_eq!(e.grads[(i, 0)], b.grads[(i, 0)] * scales[i]);
        }
    }

    #[test]
    fn pareto_set_is_scale_invariant() {
        // Pareto-stationarity (residual zero vs positive) must agree on a grid.
        let base: SharedSuite = Arc::new(QuadSuite::isotropic_1d(&[0.0, 2.0]));
        let s = scaled_suite(base.clone(), DVector::from_row_slice(&[1.0, 1000.0])).unwrap();
        for i in -20..=40 {
            let x = DVector::from_element(1, i as f64 * 0.1 + 0.05);
            let rb = pareto_residual(&base.evaluate(&x).grads);
            let rs = pareto_residual(&s.evaluate(&x).grads);
            assert_eq!(rb < 1e-20, rs < 1e-20, "x = {}", x[0]);
        }
    }

    #[test]
    fn rejects_bad_scales() {
        let base: SharedSuite = Arc::new(QuadSuite::isotropic_1d(&[0.0, 2.0]));
        assert!(scaled_suite(base.clone(), DVector::from_row_slice(&[1.0, 0.0])).is_err());
        assert!(scaled_suite(base, DVector::from_row_slice(&[1.0])).is_err());
    }
}
