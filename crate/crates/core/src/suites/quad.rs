use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CurvatureBounds, Evaluation, TaskSuite};
use crate::error::{Error, Result};

/// Raw description of a quadratic suite `l_i(x) = ½(x−a_i)ᵀA_i(x−a_i) + c_i`.
///
/// Each matrix is a row-major list of `d·d` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSpec {
    pub matrices: Vec<Vec<f64>>,
    pub centers: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct QuadSuite {
    matrices: Vec<DMatrix<f64>>,
    centers: Vec<DVector<f64>>,
    offsets: DVector<f64>,
    curvature: CurvatureBounds,
    name: String,
}

impl QuadSuite {
    pub fn new(
        matrices: Vec<DMatrix<f64>>,
        centers: Vec<DVector<f64>>,
        offsets: DVector<f64>,
    ) -> Result<Self> {
        let k = matrices.len();
        if k == 0 {
            return Err(Error::invalid("quadratic suite needs at least one task"));
        }
        if centers.len() != k || offsets.len() != k {
            return Err(Error::invalid(format!(
                "{k} matrices but {} centers and {} offsets",
                centers.len(),
                offsets.len()
            )));
        }
        let d = centers[0].len();
        if d == 0 {
            return Err(Error::invalid("parameter dimension must be positive"));
        }
        let mut mu_min = f64::INFINITY;
        let mut l_max = 0.0f64;
        for (i, (a, c)) in matrices.iter().zip(&centers).enumerate() {
            if a.nrows() != d || a.ncols() != d || c.len() != d {
                return Err(Error::invalid(format!(
                    "task {i}: dimensions do not match d = {d}"
                )));
            }
            if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("task {i}: non-finite entry")));
            }
            let scale = a.amax().max(1.0);
            if (a - a.transpose()).amax() > 1e-12 * scale {
                return Err(Error::invalid(format!("task {i}: matrix is not symmetric")));
            }
            let eig = a.clone().symmetric_eigenvalues();
            let lo = eig.min();
            if lo.is_nan() || lo <= 0.0 || a.clone().cholesky().is_none() {
                return Err(Error::invalid(format!(
                    "task {i}: matrix is not positive definite (min eigenvalue {lo})"
                )));
            }
            mu_min = mu_min.min(lo);
            l_max = l_max.max(eig.max());
        }
        if let Some(i) = offsets.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid(format!("offset {i} must be nonnegative")));
        }
        Ok(Self {
            name: format!("quad(K={k},d={d})"),
            matrices,
            centers,
            offsets,
            curvature: CurvatureBounds { mu_min, l_max },
        })
    }

    pub fn from_spec(spec: &QuadSpec) -> Result<Self> {
        let d = spec
            .centers
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("quadratic suite needs at least one center"))?;
        let matrices = spec
            .matrices
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if m.len() != d * d {
                    Err(Error::invalid(format!(
                        "matrix {i} has {} entries, expected {}",
                        m.len(),
                        d * d
                    )))
                } else {
                    Ok(DMatrix::from_row_slice(d, d, m))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let centers = spec
            .centers
            .iter()
            .map(|c| DVector::from_row_slice(c))
            .collect();
        let offsets = match &spec.offsets {
            Some(o) => DVector::from_row_slice(o),
            None => DVector::zeros(spec.matrices.len()),
        };
        Self::new(matrices, centers, offsets)
    }

    pub fn to_spec(&self) -> QuadSpec {
        QuadSpec {
            matrices: self
                .matrices
                .iter()
                .map(|a| a.transpose().as_slice().to_vec())
                .collect(),
            centers: self.centers.iter().map(|c| c.as_slice().to_vec()).collect(),
            offsets: Some(self.offsets.as_slice().to_vec()),
        }
    }

    /// Random suite with eigenvalues drawn uniformly from `eig_range` and
    /// centers uniform in `[−center_scale, center_scale]^d`; offsets are zero.
    pub fn random<R: Rng + ?Sized>(
        k: usize,
        d: usize,
        eig_range: (f64, f64),
        center_scale: f64,
        rng: &mut R,
    ) -> Self {
        let matrices = (0..k)
            .map(|_| {
                let raw = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
                let q = raw.qr().q();
                let eig = DVector::from_fn(d, |_, _| rng.gen_range(eig_range.0..=eig_range.1));
                let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
                (&a + a.transpose()) * 0.5
            })
            .collect();
        let centers = (0..k)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-center_scale..=center_scale)))
            .collect();
        Self::new(matrices, centers, DVector::zeros(k)).expect("random SPD construction")
    }

    /// One-dimensional suite with unit curvature and the given centers.
    pub fn isotropic_1d(centers: &[f64]) -> Self {
        let k = centers.len();
        Self::new(
            vec![DMatrix::identity(1, 1); k],
            centers
                .iter()
                .map(|c| DVector::from_element(1, *c))
                .collect(),
            DVector::zeros(k),
        )
        .expect("unit curvature is SPD")
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    /// Hessian `Σ w_i A_i` of the weighted lower-level objective.
    pub fn weighted_hessian(&self, weights: &DVector<f64>) -> DMatrix<f64> {
        let d = self.centers[0].len();
        self.matrices
            .iter()
            .zip(weights.iter())
            .fold(DMatrix::zeros(d, d), |acc, (a, w)| acc + a * *w)
    }
}

impl TaskSuite for QuadSuite {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_tasks(&self) -> usize {
        self.matrices.len()
    }

    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        let k = self.num_tasks();
        let mut losses = DVector::zeros(k);
        let mut grads = DMatrix::zeros(k, self.dim());
        for i in 0..k {
            let r = x - &self.centers[i];
            let ar = &self.matrices[i] * &r;
            losses[i] = 0.5 * r.dot(&ar) + self.offsets[i];
            grads.set_row(i, &ar.transpose());
        }
        Evaluation { losses, grads }
    }

    fn lower_level_solution(&self, weights: &DVector<f64>) -> Option<DVector<f64>> {
        if weights.len() != self.num_tasks() {
            return None;
        }
        let h = self.weighted_hessian(weights);
        let rhs = self
            .matrices
            .iter()
            .zip(&self.centers)
            .zip(weights.iter())
            .fold(DVector::zeros(self.dim()), |acc, ((a, c), w)| {
                acc + (a * c) * *w
            });
        h.cholesky().map(|ch| ch.solve(&rhs))
    }

    fn curvature(&self) -> Option<CurvatureBounds> {
        Some(self.curvature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(k: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let raw = DVector::from_fn(k, |_, _| -rng.gen_range(1e-12f64..1.0).ln());
        let s = raw.sum();
        raw / s
    }

    #[test]
    fn symmetric_pair_midpoint() {
        let q = QuadSuite::isotropic_1d(&[0.0, 2.0]);
        let w = DVector::from_row_slice(&[0.5, 0.5]);
        let x = q.lower_level_solution(&w).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
        let l = q.losses(&x);
        assert!((w.dot(&l) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_task_limit() {
        let mut q = QuadSuite::isotropic_1d(&[0.0, 2.0]);
        q.offsets = DVector::from_row_slice(&[0.3, 0.0]);
        let x = q
            .lower_level_solution(&DVector::from_row_slice(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(x[0], 0.0);
        assert_eq!(q.losses(&x)[0], 0.3);
    }

    #[test]
    fn closed_form_zeroes_the_weighted_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = QuadSuite::random(3, 4, (0.5, 3.0), 2.0, &mut rng);
        for _ in 0..100 {
            let w = random_simplex(3, &mut rng);
            let x = q.lower_level_solution(&w).unwrap();
            let g = q.evaluate(&x).grads.transpose() * &w;
            assert!(g.norm() <= 1e-9, "residual {}", g.norm());
        }
    }

    #[test]
    fn rejects_non_spd_and_negative_offsets() {
        let spec = QuadSpec {
            matrices: vec![vec![1.0, 0.0, 0.0, -1.0]],
            centers: vec![vec![0.0, 0.0]],
            offsets: None,
        };
        assert!(matches!(
            QuadSuite::from_spec(&spec),
            Err(Error::InvalidInput(_))
        ));
        let spec = QuadSpec {
            matrices: vec![vec![1.0, 0.5, 0.0, 1.0]],
            centers: vec![vec![0.0, 0.0]],
            offsets: None,
        };
        assert!(QuadSuite::from_spec(&spec).is_err());
        let spec = QuadSpec {
            matrices: vec![vec![2.0]],
            centers: vec![vec![0.0]],
            offsets: Some(vec![-1.0]),
        };
        assert!(QuadSuite::from_spec(&spec).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = QuadSuite::random(2, 3, (1.0, 2.0), 1.0, &mut rng);
        let back = QuadSuite::from_spec(&q.to_spec()).unwrap();
        assert_eq!(back.matrices, q.matrices);
        assert_eq!(back.centers, q.centers);
    }

    #[test]
    fn curvature_bounds_cover_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = QuadSuite::random(4, 3, (0.7, 2.5), 1.0, &mut rng);
        let c = q.curvature().unwrap();
        assert!(c.mu_min >= 0.7 - 1e-9 && c.l_max <= 2.5 + 1e-9);
    }
}
