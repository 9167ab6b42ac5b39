use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepperKind {
    Gd,
    #[default]
    Adam,
}

impl std::fmt::Display for StepperKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gd => "gd",
            Self::Adam => "adam",
        })
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Update rule for one variable block. Adam moments start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepperState {
    kind: StepperKind,
    learning_rate: f64,
    m: DVector<f64>,
    v: DVector<f64>,
    t: u64,
}

impl StepperState {
    pub fn new(kind: StepperKind, learning_rate: f64, len: usize) -> Self {
        let moments = match kind {
            StepperKind::Gd => 0,
            StepperKind::Adam => len,
        };
        Self {
            kind,
            learning_rate,
            m: DVector::zeros(moments),
            v: DVector::zeros(moments),
            t: 0,
        }
    }

    pub fn gd(learning_rate: f64, len: usize) -> Self {
        Self::new(StepperKind::Gd, learning_rate, len)
    }

    pub fn adam(learning_rate: f64, len: usize) -> Self {
        Self::new(StepperKind::Adam, learning_rate, len)
    }

    pub fn kind(&self) -> StepperKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Moves `param` against `grad` in place.
    pub fn step(&mut self, param: &mut DVector<f64>, grad: &DVector<f64>) {
        self.t += 1;
        match self.kind {
            StepperKind::Gd => param.axpy(-self.learning_rate, grad, 1.0),
            StepperKind::Adam => {
                let t = self.t as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..param.len() {
                    let g = grad[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gd_is_plain_descent() {
        let mut s = StepperState::gd(0.1, 2);
        let mut p = DVector::from_row_slice(&[1.0, -1.0]);
        s.step(&mut p, &DVector::from_row_slice(&[2.0, 4.0]));
        assert_eq!(p, DVector::from_row_slice(&[0.8, -1.4]));
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        // With bias correction the first update is lr·g/(|g| + eps).
        let mut s = StepperState::adam(1e-3, 2);
        let mut p = DVector::zeros(2);
        s.step(&mut p, &DVector::from_row_slice(&[3.0, -0.5]));
        assert!((p[0] + 1e-3 * 3.0 / (3.0 + ADAM_EPS)).abs() < 1e-18);
        assert!((p[1] - 1e-3 * 0.5 / (0.5 + ADAM_EPS)).abs() < 1e-18);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = StepperState::adam(1e-2, 1);
        let mut p = DVector::from_element(1, 3.0);
        for _ in 0..5000 {
            let g = p.clone() * 2.0;
            s.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-2);
        assert_eq!(s.steps_taken(), 5000);
    }
}
