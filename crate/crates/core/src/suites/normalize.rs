use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Clamp applied to losses before division or logarithm.
pub const LOSS_FLOOR: f64 = 1e-12;
/// Steps between log-mode baseline refreshes.
pub const DEFAULT_EPOCH_LENGTH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Raw losses.
    #[default]
    None,
    /// `log(l_i / l_{i,0})` with the baseline refreshed every epoch.
    Log,
    /// `l_i / l_i'` with the baseline frozen at the first step.
    Rescale,
}

impl std::fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Log => "log",
            Self::Rescale => "rescale",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationState {
    mode: NormalizationMode,
    baseline: DVector<f64>,
    epoch_length: usize,
    floor: f64,
    captured: bool,
}

impl NormalizationState {
    pub fn new(mode: NormalizationMode, k: usize) -> Self {
        Self {
            mode,
            baseline: DVector::from_element(k, 1.0),
            epoch_length: DEFAULT_EPOCH_LENGTH,
            floor: LOSS_FLOOR,
            captured: false,
        }
    }

    pub fn with_epoch_length(mut self, epoch_length: usize) -> Self {
        self.epoch_length = epoch_length.max(1);
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    /// State with an explicit baseline, e.g. when replaying a stored trajectory.
    pub fn with_baseline(mut self, baseline: DVector<f64>) -> Self {
        if self.mode != NormalizationMode::None {
            self.baseline = baseline.map(|b| b.abs().max(self.floor));
            self.captured = true;
        }
        self
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn baseline(&self) -> &DVector<f64> {
        &self.baseline
    }

    pub fn epoch_length(&self) -> usize {
        self.epoch_length
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Whether `capture` at `step` replaces the baseline.
    pub fn refreshes_at(&self, step: usize) -> bool {
        match self.mode {
            NormalizationMode::None => false,
            NormalizationMode::Rescale => !self.captured,
            NormalizationMode::Log => !self.captured || step.is_multiple_of(self.epoch_length),
        }
    }

    /// Updates the baseline from the losses observed at `step`.
    ///
    /// Baselines are `max(|l_i|, floor)`, so a negative initial loss keeps its
    /// magnitude as the scale and the sign of the normalized loss.
    pub fn capture(&mut self, current_losses: &DVector<f64>, step: usize) {
        if self.refreshes_at(step) {
            self.baseline = current_losses.map(|l| l.abs().max(self.floor));
            self.captured = true;
        }
    }

    pub fn capture_baseline(&self, current_losses: &DVector<f64>, step: usize) -> Self {
        let mut next = self.clone();
        next.capture(current_losses, step);
        next
    }

    /// Normalized losses and gradient rows.
    pub fn normalize(
        &self,
        raw_losses: &DVector<f64>,
        raw_grads: &DMatrix<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        match self.mode {
            NormalizationMode::None => (raw_losses.clone(), raw_grads.clone()),
            NormalizationMode::Rescale => {
                let l = raw_losses.component_div(&self.baseline);
                let mut g = raw_grads.clone();
                for (i, b) in self.baseline.iter().enumerate() {
                    let mut row = g.row_mut(i);
                    row /= *b;
                }
                (l, g)
            }
            NormalizationMode::Log => {
                let clamped = raw_losses.map(|l| l.max(self.floor));
                let l = clamped.zip_map(&self.baseline, |c, b| (c / b).ln());
                let mut g = raw_grads.clone();
                for (i, c) in clamped.iter().enumerate() {
                    let mut row = g.row_mut(i);
                    row /= *c;
                }
                (l, g)
            }
        }
    }

    /// Inverse of the loss map (exact for log mode whenever `l_i ≥ floor`).
    pub fn denormalize(&self, normalized: &DVector<f64>) -> DVector<f64> {
        match self.mode {
            NormalizationMode::None => normalized.clone(),
            NormalizationMode::Rescale => normalized.component_mul(&self.baseline),
            NormalizationMode::Log => normalized.zip_map(&self.baseline, |n, b| n.exp() * b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn none_mode_is_passthrough_with_unit_baseline() {
        let mut s = NormalizationState::new(NormalizationMode::None, 2);
        s.capture(&dv(&[3.0, 4.0]), 0);
        assert_eq!(s.baseline(), &dv(&[1.0, 1.0]));
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (l, gn) = s.normalize(&dv(&[3.0, 4.0]), &g);
        assert_eq!(l, dv(&[3.0, 4.0]));
        assert_eq!(gn, g);
    }

    #[test]
    fn rescale_freezes_first_baseline() {
        let s = NormalizationState::new(NormalizationMode::Rescale, 2);
        let s = s.capture_baseline(&dv(&[2.0, 4.0]), 0);
        assert_eq!(s.baseline(), &dv(&[2.0, 4.0]));
        let s = s.capture_baseline(&dv(&[1.0, 1.0]), 100);
        assert_eq!(s.baseline(), &dv(&[2.0, 4.0]));
        let (l, _) = s.normalize(&dv(&[2.0, 4.0]), &DMatrix::zeros(2, 1));
        assert_eq!(l, dv(&[1.0, 1.0]));
    }

    #[test]
    fn log_refreshes_each_epoch() {
        let s = NormalizationState::new(NormalizationMode::Log, 2).with_epoch_length(10);
        let s = s.capture_baseline(&dv(&[2.0, 4.0]), 0);
        let s = s.capture_baseline(&dv(&[9.0, 9.0]), 7);
        assert_eq!(s.baseline(), &dv(&[2.0, 4.0]));
        let s = s.capture_baseline(&dv(&[1.0, 3.0]), 10);
        assert_eq!(s.baseline(), &dv(&[1.0, 3.0]));
    }

    #[test]
    fn floor_clamps_zero_losses() {
        let s = NormalizationState::new(NormalizationMode::Rescale, 2)
            .capture_baseline(&dv(&[0.0, 5.0]), 0);
        assert_eq!(s.baseline(), &dv(&[1e-12, 5.0]));
    }

    #[test]
    fn log_mode_values_and_chain_rule() {
        let s = NormalizationState::new(NormalizationMode::Log, 2)
            .capture_baseline(&dv(&[2.0, 3.0]), 0);
        let raw = dv(&[2.0, std::f64::consts::E * 3.0]);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (l, gn) = s.normalize(&raw, &g);
        assert_eq!(l[0], 0.0);
        assert!((l[1] - 1.0).abs() < 1e-15);
        assert_eq!(gn[(0, 1)], 1.0);
        assert!((gn[(1, 0)] - 3.0 / raw[1]).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(
            base in prop::collection::vec(1e-3f64..1e3, 3),
            raw in prop::collection::vec(1e-3f64..1e3, 3),
            log in any::<bool>(),
        ) {
            let mode = if log { NormalizationMode::Log } else { NormalizationMode::Rescale };
            let s = NormalizationState::new(mode, 3).capture_baseline(&DVector::from_vec(base), 0);
            let raw = DVector::from_vec(raw);
            let (l, _) = s.normalize(&raw, &DMatrix::zeros(3, 1));
            let back = s.denormalize(&l);
            for i in 0..3 {
                prop_assert!((back[i] - raw[i]).abs() <= 1e-12 * raw[i].abs());
            }
        }
    }
}
