//! Fairness-aware sample weighting for class-incremental learning.
//!
//! Each epoch the trainer solves a small linear program for per-sample weights on the
//! current task, trading a first-order estimate of group-loss disparity against accuracy,
//! then trains on the weighted task plus a replay buffer.

// Dense linear algebra reads better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod datasets;
pub mod error;
pub mod fsw;
pub mod groups;
pub mod harness;
pub mod lp;
pub mod metrics;
pub mod oracles;
pub mod replay;
pub mod tensor;
pub mod trainer;

pub use datasets::{TaskDataset, TaskStream};
pub use error::{Error, ErrorCategory, Result};
pub use fsw::{fsw_weights, FairnessMeasure, FswConfig, FswOutcome, WeightVector};
pub use groups::{GroupKey, GroupStats, LinearLossForm};
pub use harness::{grid_sweep, run_experiment, ExperimentConfig, ExperimentReport, Overrides};
pub use lp::{build_abs_lp, solve_lp, AbsObjective, LpProblem, LpSolution, LpStatus};
pub use metrics::{DisparitySnapshot, MetricsReport};
pub use replay::ReplayBuffer;
pub use tensor::{GradientVector, MlpModel, Sample};
pub use trainer::{run_method, Method, RunHistory, TrainConfig};
