//! Learning-rate annealing with warm restarts, and the small toolkit needed to
//! compare schedules: first- and second-order optimizers, analytic test
//! landscapes, a dense MLP, synthetic and CIFAR-10 data, and a seeded
//! experiment harness.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar to `f64`, which is what the harness and CLI
//! use.

// Validation uses `!(x > 0)` style checks on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod harness;
pub mod landscape;
pub mod linalg;
pub mod micronet;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod schedule;

pub use dataio::{batch_iter, gen_blobs, normalize, parse_cifar10, split, BlobSpec, Cifar10Record, DataError};
pub use harness::{
    check_halt, compare, landscape_run, run_experiment, EpochMetrics, ExperimentConfig, HaltRule, HarnessError,
    LandscapeOptimizer, RunResult, Task, TrajectoryPoint,
};
pub use landscape::{fd_grad, FdSpec, LandscapeError};
pub use micronet::{Activation, NetError, OutputHead};
pub use optim::{adam_step, newton_step, sgd_step, AdamConfig, OptimError};
pub use report::{bytes_checksum, fmt_sig, params_checksum};
pub use scalar::Scalar;
pub use schedule::{
    cosine_lr, dump_schedule, locate_cycle, log_lr, lr_at, step_decay_lr, warmup_lr, LogBaseRule, ScheduleError,
    ScheduleKind, ScheduleState,
};

pub type Matrix = linalg::Matrix<f64>;
pub type ParamVector = optim::ParamVector<f64>;
pub type SgdConfig = optim::SgdConfig<f64>;
pub type OptimizerConfig = optim::OptimizerConfig<f64>;
pub type Optimizer = optim::Optimizer<f64>;
pub type CycleRange = schedule::CycleRange<f64>;
pub type RestartPolicy = schedule::RestartPolicy<f64>;
pub type WarmupConfig = schedule::WarmupConfig<f64>;
pub type ScheduleSpec = schedule::ScheduleSpec<f64>;
pub type Scheduler = schedule::Scheduler<f64>;
pub type LandscapeKind = landscape::LandscapeKind<f64>;
pub type MlpSpec = micronet::MlpSpec<f64>;
pub type MlpModel = micronet::MlpModel<f64>;
pub type Labels = micronet::Labels<f64>;
pub type Batch = micronet::Batch<f64>;
pub type Dataset = dataio::Dataset<f64>;

/// Single-precision aliases.
pub mod f32 {
    pub type Matrix = crate::linalg::Matrix<f32>;
    pub type ParamVector = crate::optim::ParamVector<f32>;
    pub type ScheduleSpec = crate::schedule::ScheduleSpec<f32>;
    pub type Scheduler = crate::schedule::Scheduler<f32>;
    pub type LandscapeKind = crate::landscape::LandscapeKind<f32>;
    pub type MlpSpec = crate::micronet::MlpSpec<f32>;
    pub type MlpModel = crate::micronet::MlpModel<f32>;
    pub type Dataset = crate::dataio::Dataset<f32>;
}
