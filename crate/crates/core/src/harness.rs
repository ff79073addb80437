//! Seeded training loops: schedule -> optimizer -> model or landscape.
//!
//! Rates are stepped once per epoch. Every run owns its state and derives all
//! randomness from the config seed, so identical configs give bit-identical
//! results, and [`compare`] can run schedules on separate threads.

use std::io::{self, Write};
use std::thread;

use thiserror::Error;

use crate::dataio::{batch_iter, DataError, Dataset};
use crate::landscape::{LandscapeError, LandscapeKind};
use crate::micronet::{correct_count, MlpModel, MlpSpec, NetError};
use crate::optim::{newton_step, OptimError, Optimizer, OptimizerConfig, ParamVector};
use crate::report::{fmt_sig, params_checksum};
use crate::schedule::{lr_at, ScheduleSpec, Scheduler};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid experiment: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Early-stop rule: halt once more than `buffer_epochs` epochs have completed
/// and the epoch's mean loss is strictly above `loss_threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaltRule {
    pub buffer_epochs: usize,
    pub loss_threshold: f64,
}

impl Default for HaltRule {
    fn default() -> Self {
        Self {
            buffer_epochs: 2,
            loss_threshold: 4.5,
        }
    }
}

/// `epoch` counts completed epochs, starting at 1.
pub fn check_halt(rule: &HaltRule, epoch: usize, mean_loss: f64) -> bool {
    epoch > rule.buffer_epochs && mean_loss > rule.loss_threshold
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    /// Classification with an MLP on a dataset.
    Mlp { spec: MlpSpec<f64>, data: Dataset<f64> },
    /// Full-gradient descent on an analytic landscape, one step per epoch.
    Landscape { kind: LandscapeKind<f64>, start: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub optimizer: OptimizerConfig<f64>,
    pub schedule: ScheduleSpec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub halt: HaltRule,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(HarnessError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(HarnessError::InvalidConfig("batch size must be >= 1".into()));
        }
        if !self.halt.loss_threshold.is_finite() {
            return Err(HarnessError::InvalidConfig("halt threshold must be finite".into()));
        }
        self.optimizer.validate()?;
        match &self.task {
            Task::Mlp { spec, data } => {
                spec.validate()?;
                data.validate()?;
                if data.dim() != spec.input_dim() {
                    return Err(HarnessError::InvalidConfig(format!(
                        "dataset has {} features, network expects {}",
                        data.dim(),
                        spec.input_dim()
                    )));
                }
                if data.classes > spec.classes() {
                    return Err(HarnessError::InvalidConfig(format!(
                        "dataset has {} classes, network outputs {}",
                        data.classes,
                        spec.classes()
                    )));
                }
            }
            Task::Landscape { kind, start } => {
                kind.eval(start)?;
                if start.iter().any(|v| !v.is_finite()) {
                    return Err(HarnessError::InvalidConfig("non-finite start point".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 0-based, aligned with the schedule's epoch index.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Training accuracy over the epoch's batches; `None` for landscapes.
    pub accuracy: Option<f64>,
    pub lr_min: f64,
    pub lr_mean: f64,
    pub lr_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub schedule: String,
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
    pub halted: bool,
    /// Index of the epoch on which the halt rule fired.
    pub halt_epoch: Option<usize>,
    pub initial_params_checksum: u64,
    pub final_params_checksum: u64,
    pub optimizer_steps: u64,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn checksum(p: &ParamVector<f64>) -> u64 {
    params_checksum(p.as_slice().iter().copied())
}

struct LrStats {
    min: f64,
    max: f64,
    sum: f64,
    count: usize,
}

impl LrStats {
    fn new() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            sum: 0.0,
            count: 0,
        }
    }

    fn push(&mut self, lr: f64) {
        self.min = self.min.min(lr);
        self.max = self.max.max(lr);
        self.sum += lr;
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Runs one experiment to completion, halt, or divergence.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    match &cfg.task {
        Task::Mlp { spec, data } => run_mlp(cfg, spec, data),
        Task::Landscape { kind, start } => run_landscape_epochs(cfg, kind, start),
    }
}

fn run_mlp(cfg: &ExperimentConfig, spec: &MlpSpec<f64>, data: &Dataset<f64>) -> Result<RunResult> {
    let mut model = MlpModel::init(spec.clone())?;
    let mut optimizer = Optimizer::new(cfg.optimizer, model.params().len())?;
    let mut scheduler = Scheduler::new(cfg.schedule);
    let initial = checksum(model.params());
    let batch_size = cfg.batch_size.min(data.len());
    let n = data.len() as f64;

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut steps = 0u64;
    let mut halt_epoch = None;
    for epoch in 0..cfg.epochs {
        let lr = scheduler.lr();
        let mut lrs = LrStats::new();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut broken = None;
        for batch in batch_iter(data, batch_size, epoch_seed(cfg.seed, epoch))? {
            let cache = model.forward(&batch.inputs)?;
            let loss = model.loss(&cache, &batch.labels)?;
            if !loss.is_finite() {
                broken = Some(loss);
                break;
            }
            loss_sum += loss * batch.len() as f64;
            correct += correct_count(cache.outputs(), &batch.labels);
            let grads = model.backward(&cache, &batch.labels)?;
            lrs.push(lr);
            match optimizer.step(model.params_mut(), &grads, lr) {
                Ok(()) => steps += 1,
                Err(OptimError::NonFiniteGradient { .. }) => {
                    broken = Some(f64::NAN);
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if lrs.count == 0 {
            lrs.push(lr);
        }
        let mean_loss = broken.unwrap_or(loss_sum / n);
        metrics.push(EpochMetrics {
            epoch,
            mean_loss,
            accuracy: Some(correct as f64 / n),
            lr_min: lrs.min,
            lr_mean: lrs.mean(),
            lr_max: lrs.max,
        });
        if check_halt(&cfg.halt, epoch + 1, mean_loss) {
            halt_epoch = Some(epoch);
            break;
        }
        if !mean_loss.is_finite() {
            return Err(HarnessError::Divergence { epoch, loss: mean_loss });
        }
        scheduler.step();
    }
    Ok(RunResult {
        schedule: cfg.schedule.name().to_string(),
        seed: cfg.seed,
        metrics,
        halted: halt_epoch.is_some(),
        halt_epoch,
        initial_params_checksum: initial,
        final_params_checksum: checksum(model.params()),
        optimizer_steps: steps,
    })
}

fn run_landscape_epochs(cfg: &ExperimentConfig, kind: &LandscapeKind<f64>, start: &[f64]) -> Result<RunResult> {
    let mut params = ParamVector::new(start.to_vec());
    let mut optimizer = Optimizer::new(cfg.optimizer, params.len())?;
    let mut scheduler = Scheduler::new(cfg.schedule);
    let initial = checksum(&params);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let mut halt_epoch = None;
    for epoch in 0..cfg.epochs {
        let lr = scheduler.lr();
        let f = kind.eval(params.as_slice())?;
        if f.is_finite() {
            let g = kind.grad(params.as_slice())?;
            if g.iter().all(|v| v.is_finite()) {
                optimizer.step(&mut params, &g, lr)?;
                steps += 1;
            }
        }
        metrics.push(EpochMetrics {
            epoch,
            mean_loss: f,
            accuracy: None,
            lr_min: lr,
            lr_mean: lr,
            lr_max: lr,
        });
        if check_halt(&cfg.halt, epoch + 1, f) {
            halt_epoch = Some(epoch);
            break;
        }
        if !f.is_finite() || !params.is_finite() {
            return Err(HarnessError::Divergence { epoch, loss: f });
        }
        scheduler.step();
    }
    Ok(RunResult {
        schedule: cfg.schedule.name().to_string(),
        seed: cfg.seed,
        metrics,
        halted: halt_epoch.is_some(),
        halt_epoch,
        initial_params_checksum: initial,
        final_params_checksum: checksum(&params),
        optimizer_steps: steps,
    })
}

/// Runs `base` once per schedule, concurrently. Everything except the
/// schedule (seed, data, initialisation) is shared, and a failing run does
/// not affect its siblings. Results keep the order of `schedules`.
pub fn compare(base: &ExperimentConfig, schedules: &[ScheduleSpec<f64>]) -> Result<Vec<(String, Result<RunResult>)>> {
    if schedules.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "compare needs at least one schedule".into(),
        ));
    }
    let results = thread::scope(|scope| {
        let handles: Vec<_> = schedules
            .iter()
            .map(|spec| {
                let cfg = ExperimentConfig {
                    schedule: *spec,
                    ..base.clone()
                };
                scope.spawn(move || run_experiment(&cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect::<Vec<_>>()
    });
    Ok(schedules.iter().map(|s| s.name().to_string()).zip(results).collect())
}

/// Optimizers usable on an analytic landscape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LandscapeOptimizer {
    FirstOrder(OptimizerConfig<f64>),
    /// Damped Newton using the landscape's analytic Hessian.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    /// 1-based step number; values are recorded after the update.
    pub step: usize,
    pub f: f64,
    /// Smallest `f` seen so far, including the start point.
    pub best_f: f64,
    pub lr: f64,
}

/// Runs `steps` updates from `start`, using the schedule's rate for step
/// index `s` (0-based) on update `s + 1`.
pub fn landscape_run(
    kind: &LandscapeKind<f64>,
    start: &[f64],
    optimizer: LandscapeOptimizer,
    schedule: &ScheduleSpec<f64>,
    steps: usize,
) -> Result<Vec<TrajectoryPoint>> {
    if steps < 1 {
        return Err(HarnessError::InvalidConfig("steps must be >= 1".into()));
    }
    let mut params = ParamVector::new(start.to_vec());
    let mut first_order = match optimizer {
        LandscapeOptimizer::FirstOrder(cfg) => Some(Optimizer::new(cfg, params.len())?),
        LandscapeOptimizer::Newton => None,
    };
    let mut best = kind.eval(start)?;
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        let lr = lr_at(schedule, s);
        let g = kind.grad(params.as_slice())?;
        match first_order.as_mut() {
            Some(opt) => opt.step(&mut params, &g, lr),
            None => {
                let h = kind.hessian(params.as_slice())?;
                newton_step(&mut params, &g, &h, lr)
            }
        }
        .map_err(|e| match e {
            OptimError::NonFiniteGradient { .. } => HarnessError::Divergence {
                epoch: s + 1,
                loss: f64::NAN,
            },
            other => other.into(),
        })?;
        let f = kind.eval(params.as_slice())?;
        if !f.is_finite() {
            return Err(HarnessError::Divergence { epoch: s + 1, loss: f });
        }
        best = best.min(f);
        out.push(TrajectoryPoint {
            step: s + 1,
            f,
            best_f: best,
            lr,
        });
    }
    Ok(out)
}

/// CSV with header `epoch,mean_loss,accuracy,lr_min,lr_mean,lr_max`;
/// accuracy is left empty for landscape runs.
pub fn write_run_csv<W: Write + ?Sized>(out: &mut W, result: &RunResult) -> io::Result<()> {
    writeln!(out, "epoch,mean_loss,accuracy,lr_min,lr_mean,lr_max")?;
    for m in &result.metrics {
        let acc = m.accuracy.map(|a| fmt_sig(a, 10)).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m.epoch,
            fmt_sig(m.mean_loss, 10),
            acc,
            fmt_sig(m.lr_min, 10),
            fmt_sig(m.lr_mean, 10),
            fmt_sig(m.lr_max, 10)
        )?;
    }
    Ok(())
}

/// `key=value` sidecar describing a run.
pub fn write_run_metadata<W: Write + ?Sized>(out: &mut W, result: &RunResult) -> io::Result<()> {
    writeln!(out, "schedule={}", result.schedule)?;
    writeln!(out, "seed={}", result.seed)?;
    writeln!(out, "halted={}", result.halted)?;
    match result.halt_epoch {
        Some(e) => writeln!(out, "halt_epoch={e}")?,
        None => writeln!(out, "halt_epoch=")?,
    }
    writeln!(out, "epochs_completed={}", result.metrics.len())?;
    writeln!(out, "optimizer_steps={}", result.optimizer_steps)?;
    writeln!(out, "initial_params_checksum={:016x}", result.initial_params_checksum)?;
    writeln!(out, "final_params_checksum={:016x}", result.final_params_checksum)?;
    Ok(())
}

/// CSV with header `step,f,best_f,lr`.
pub fn write_trajectory_csv<W: Write + ?Sized>(out: &mut W, points: &[TrajectoryPoint]) -> io::Result<()> {
    writeln!(out, "step,f,best_f,lr")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            p.step,
            fmt_sig(p.f, 10),
            fmt_sig(p.best_f, 10),
            fmt_sig(p.lr, 10)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_blobs, BlobSpec};
    use crate::linalg::Matrix;
    use crate::micronet::{Activation, OutputHead};
    use crate::optim::{AdamConfig, SgdConfig};
    use crate::schedule::{LogBaseRule, RestartPolicy, ScheduleKind, WarmupConfig};

    fn small_blobs() -> Dataset<f64> {
        gen_blobs(&BlobSpec {
            classes: 2,
            per_class: 40,
            dim: 2,
            center_separation: 4.0,
            noise_sigma: 1.0,
            seed: 7,
        })
        .unwrap()
    }

    fn mlp_cfg(schedule: ScheduleSpec<f64>, epochs: usize, batch_size: usize) -> ExperimentConfig {
        ExperimentConfig {
            task: Task::Mlp {
                spec: MlpSpec {
                    layer_sizes: vec![2, 8, 2],
                    hidden_activation: Activation::Relu,
                    output_head: OutputHead::SoftmaxWithSparseCe,
                    init_seed: 7,
                },
                data: small_blobs(),
            },
            optimizer: OptimizerConfig::Sgd(SgdConfig {
                momentum: 0.9,
                dampening: 0.0,
                weight_decay: 0.0005,
            }),
            schedule,
            epochs,
            batch_size,
            seed: 7,
            halt: HaltRule::default(),
        }
    }

    fn log_spec() -> ScheduleSpec<f64> {
        ScheduleSpec::new(
            ScheduleKind::LogAnnealing {
                base: LogBaseRule::RangeReciprocal,
            },
            RestartPolicy {
                initial_decay_epochs: 10,
                restart_interval: 10,
                restart_interval_multiplier: 2.0,
                restart_lr: 0.1,
                min_decay_lr: 0.001,
            },
            WarmupConfig::none(),
        )
        .unwrap()
    }

    #[test]
    fn halt_examples() {
        let rule = HaltRule::default();
        assert!(!check_halt(&rule, 1, 5.0));
        assert!(check_halt(&rule, 3, 4.6));
        assert!(!check_halt(&rule, 3, 4.5));
        assert!(!check_halt(&rule, 2, 100.0));
    }

    #[test]
    fn halt_matches_brute_force_scan() {
        let rule = HaltRule::default();
        let losses = [6.0, 5.5, 4.4, 4.5, 4.51, 1.0];
        let first = (1..=losses.len()).find(|&e| e > 2 && losses[e - 1] > 4.5);
        let fired = (1..=losses.len()).find(|&e| check_halt(&rule, e, losses[e - 1]));
        assert_eq!(first, Some(5));
        assert_eq!(fired, first);
    }

    #[test]
    fn zero_lr_freezes_parameters() {
        let cfg = mlp_cfg(ScheduleSpec::constant(0.0).unwrap(), 4, 16);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.initial_params_checksum, r.final_params_checksum);
        let first = r.metrics[0].mean_loss;
        assert!(r.metrics.iter().all(|m| (m.mean_loss - first).abs() < 1e-12));
    }

    #[test]
    fn full_batch_single_epoch_is_one_step() {
        let cfg = mlp_cfg(ScheduleSpec::constant(0.01).unwrap(), 1, 80);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.optimizer_steps, 1);
        assert_eq!(r.metrics.len(), 1);
        assert_ne!(r.initial_params_checksum, r.final_params_checksum);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = mlp_cfg(log_spec(), 5, 16);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_run_csv(&mut ca, &a).unwrap();
        write_run_csv(&mut cb, &b).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn halt_fires_on_high_loss() {
        let mut cfg = mlp_cfg(ScheduleSpec::constant(0.0).unwrap(), 10, 16);
        cfg.halt.loss_threshold = 0.01;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.halted);
        assert_eq!(r.halt_epoch, Some(2));
        assert_eq!(r.metrics.len(), 3);
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = mlp_cfg(ScheduleSpec::constant(1e6).unwrap(), 50, 16);
        cfg.halt.buffer_epochs = 1000;
        match run_experiment(&cfg) {
            Err(HarnessError::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn compare_shares_initialisation() {
        let cfg = mlp_cfg(log_spec(), 3, 16);
        let specs = [log_spec(), ScheduleSpec::constant(0.01).unwrap(), log_spec()];
        let out = compare(&cfg, &specs).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].0, "log");
        let runs: Vec<&RunResult> = out.iter().map(|(_, r)| r.as_ref().unwrap()).collect();
        assert!(runs
            .iter()
            .all(|r| r.initial_params_checksum == runs[0].initial_params_checksum));
        assert_eq!(runs[0], runs[2]);
        assert_eq!(*runs[0], run_experiment(&cfg).unwrap());
        assert!(compare(&cfg, &[]).is_err());
    }

    #[test]
    fn compare_isolates_failures() {
        let mut cfg = mlp_cfg(log_spec(), 30, 16);
        cfg.halt.buffer_epochs = 1000;
        let out = compare(&cfg, &[ScheduleSpec::constant(1e6).unwrap(), log_spec()]).unwrap();
        assert!(matches!(out[0].1, Err(HarnessError::Divergence { .. })));
        assert!(out[1].1.is_ok());
    }

    #[test]
    fn landscape_newton_on_quadratic() {
        let a = Matrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]);
        let kind = LandscapeKind::quadratic(a).unwrap();
        let pts = landscape_run(
            &kind,
            &[1.0, -4.0],
            LandscapeOptimizer::Newton,
            &ScheduleSpec::constant(1.0).unwrap(),
            1,
        )
        .unwrap();
        assert!(pts[0].f <= 1e-20);
    }

    #[test]
    fn rastrigin_origin_is_stationary() {
        let opts = [
            LandscapeOptimizer::FirstOrder(OptimizerConfig::Sgd(SgdConfig::plain())),
            LandscapeOptimizer::FirstOrder(OptimizerConfig::Adam(AdamConfig::default())),
            LandscapeOptimizer::Newton,
        ];
        for opt in opts {
            let pts = landscape_run(&LandscapeKind::Rastrigin, &[0.0, 0.0], opt, &log_spec(), 25).unwrap();
            assert!(pts.iter().all(|p| p.f == 0.0));
        }
    }

    #[test]
    fn newton_on_ackley_is_rejected() {
        let err = landscape_run(
            &LandscapeKind::Ackley,
            &[0.5, 0.5],
            LandscapeOptimizer::Newton,
            &ScheduleSpec::constant(1.0).unwrap(),
            3,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            HarnessError::Landscape(LandscapeError::UnsupportedHessian(_))
        ));
    }

    #[test]
    fn landscape_epochs_task() {
        let cfg = ExperimentConfig {
            task: Task::Landscape {
                kind: LandscapeKind::quadratic(Matrix::identity(2)).unwrap(),
                start: vec![1.0, 1.0],
            },
            optimizer: OptimizerConfig::Sgd(SgdConfig::plain()),
            schedule: ScheduleSpec::constant(0.5).unwrap(),
            epochs: 3,
            batch_size: 1,
            seed: 0,
            halt: HaltRule::default(),
        };
        let r = run_experiment(&cfg).unwrap();
        let losses: Vec<f64> = r.metrics.iter().map(|m| m.mean_loss).collect();
        assert_eq!(losses, vec![1.0, 0.25, 0.0625]);
        let mut csv = Vec::new();
        write_run_csv(&mut csv, &r).unwrap();
        assert!(String::from_utf8(csv).unwrap().contains("\n0,1,,0.5,0.5,0.5\n"));
    }

    #[test]
    fn metadata_lines() {
        let r = run_experiment(&mlp_cfg(log_spec(), 2, 16)).unwrap();
        let mut buf = Vec::new();
        write_run_metadata(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("schedule=log\nseed=7\nhalted=false\nhalt_epoch=\n"));
    }
}
