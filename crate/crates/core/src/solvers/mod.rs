//! Update rules, training loops and the min-norm solver.

mod min_norm;
mod run;
mod stepper;
mod steps;

pub use min_norm::{min_norm_weights, MinNorm, FW_GAP_TOL, FW_MAX_ITERS};
pub use run::{
    run, step_once, InitPoint, Method, RecordStatus, RunConfig, RunOutcome, TrajectoryRecord,
};
pub use stepper::{StepperKind, StepperState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use steps::{
    inner_z_loop, ldc_double_step, ldc_double_step_with, ldc_single_step, ls_step, mgda_step,
    Correction, StepDiagnostics, Steppers, TrainState, DIVERGENCE_LIMIT,
};

pub use min_norm::frank_wolfe;
