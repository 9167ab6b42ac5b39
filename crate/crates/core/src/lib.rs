//! Loss-discrepancy-controlled multi-task optimization.
//!
//! A router `σ = softmax(W)` weights per-task losses. The upper level keeps the
//! weighted losses close to each other; the lower level minimizes their
//! weighted sum. The bilevel problem is solved through a penalty reformulation
//! with either a double-loop or a single-loop method, next to linear
//! scalarization and MGDA baselines.

pub mod error;
pub mod harness;
pub mod math;
pub mod metrics;
pub mod objective;
pub mod par;
pub mod solvers;
pub mod suites;

pub use error::{Divergence, Error, Result};
pub use math::{SimplexWeights, SoftAbsParams};
pub use objective::{BilevelConfig, RouterState, TauMode, UpperLevelConfig};
pub use solvers::{run, Method, RunConfig, RunOutcome, TrajectoryRecord};
pub use suites::{Evaluation, NormalizationMode, SharedSuite, TaskSuite};
