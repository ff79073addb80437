//! Epoch-indexed learning-rate schedules.
//!
//! Four kinds are supported: cyclical log annealing and cosine annealing, both
//! with warm restarts and an optional linear warmup, plus step decay and a
//! constant rate. Every annealing cycle runs its in-cycle counter `t_cur` from 1
//! to `t_i`; cycle 0 lasts `initial_decay_epochs` and cycle `i >= 1` lasts
//! `round(restart_interval * multiplier^(i-1))` epochs (at least 1).
//!
//! Two routes compute the same rates: [`Scheduler`] steps a [`ScheduleState`]
//! one epoch at a time, while [`lr_at`] locates the cycle for an epoch directly.

use std::io::{self, Write};

use thiserror::Error;

use crate::report::fmt_sig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("invalid cycle position: t_cur={t_cur}, t_i={t_i} (need t_i >= 1 and t_cur <= t_i)")]
    InvalidCycle { t_cur: usize, t_i: usize },
    #[error("log annealing divides by t_cur, which must be >= 1")]
    ZeroCursor,
    #[error("logarithm base must be finite and > 1, got {0}")]
    InvalidBase(f64),
    #[error("warmup inactive at epoch {epoch} (warmup_epochs={warmup_epochs})")]
    WarmupInactive { epoch: usize, warmup_epochs: usize },
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T, E = ScheduleError> = std::result::Result<T, E>;

fn invalid<T>(name: &'static str, reason: impl Into<String>) -> Result<T> {
    Err(ScheduleError::InvalidParameter {
        name,
        reason: reason.into(),
    })
}

/// Learning-rate range of one annealing cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRange<T> {
    pub eta_min: T,
    pub eta_max: T,
}

impl<T: Scalar> CycleRange<T> {
    pub fn new(eta_min: T, eta_max: T) -> Result<Self> {
        let range = Self { eta_min, eta_max };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_min > T::zero() && self.eta_min.is_finite()) {
            return invalid("eta_min", format!("must be finite and > 0, got {}", self.eta_min));
        }
        if !(self.eta_max > self.eta_min && self.eta_max.is_finite()) {
            return invalid(
                "eta_max",
                format!("must be finite and > eta_min ({}), got {}", self.eta_min, self.eta_max),
            );
        }
        Ok(())
    }
}

/// How cycle lengths grow and which rates a restart jumps between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestartPolicy<T> {
    pub initial_decay_epochs: usize,
    pub restart_interval: usize,
    pub restart_interval_multiplier: T,
    pub restart_lr: T,
    pub min_decay_lr: T,
}

impl<T: Scalar> RestartPolicy<T> {
    pub fn validate(&self) -> Result<()> {
        if self.initial_decay_epochs < 1 {
            return invalid("initial_decay_epochs", "must be >= 1");
        }
        if self.restart_interval < 1 {
            return invalid("restart_interval", "must be >= 1");
        }
        let mult = self.restart_interval_multiplier;
        if !(mult >= T::one() && mult.is_finite()) {
            return invalid(
                "restart_interval_multiplier",
                format!("must be finite and >= 1.0, got {mult}"),
            );
        }
        if !(self.min_decay_lr > T::zero()) {
            return invalid("min_decay_lr", format!("must be > 0, got {}", self.min_decay_lr));
        }
        if !(self.restart_lr > self.min_decay_lr && self.restart_lr.is_finite()) {
            return invalid(
                "restart_lr",
                format!(
                    "must be finite and > min_decay_lr ({}), got {}",
                    self.min_decay_lr, self.restart_lr
                ),
            );
        }
        Ok(())
    }

    /// Range used by every cycle: restarts always jump back to `restart_lr`.
    pub fn cycle(&self) -> CycleRange<T> {
        CycleRange {
            eta_min: self.min_decay_lr,
            eta_max: self.restart_lr,
        }
    }

    /// Length in epochs of cycle `index`.
    pub fn cycle_length(&self, index: usize) -> usize {
        if index == 0 {
            return self.initial_decay_epochs.max(1);
        }
        let mult = self.restart_interval_multiplier.to_f64_lossy();
        let exp = i32::try_from(index - 1).unwrap_or(i32::MAX);
        let len = self.restart_interval as f64 * mult.powi(exp);
        // `as` saturates on overflow and maps NaN to 0.
        (len.round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupConfig<T> {
    pub warmup_epochs: usize,
    pub warmup_start_lr: T,
}

impl<T: Scalar> WarmupConfig<T> {
    pub fn none() -> Self {
        Self {
            warmup_epochs: 0,
            warmup_start_lr: T::lit(1e-4),
        }
    }

    pub fn is_active(&self, epoch: usize) -> bool {
        epoch < self.warmup_epochs
    }
}

/// Base of the logarithm in log annealing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LogBaseRule<T> {
    /// `1 / (eta_max - eta_min)`
    #[default]
    RangeReciprocal,
    /// `1 / eta_min`
    MinReciprocal,
    Explicit(T),
}

impl<T: Scalar> LogBaseRule<T> {
    pub fn resolve(&self, cycle: &CycleRange<T>) -> Result<T> {
        let base = match *self {
            LogBaseRule::RangeReciprocal => (cycle.eta_max - cycle.eta_min).recip(),
            LogBaseRule::MinReciprocal => cycle.eta_min.recip(),
            LogBaseRule::Explicit(b) => b,
        };
        if base.is_finite() && base > T::one() {
            Ok(base)
        } else {
            Err(ScheduleError::InvalidBase(base.to_f64_lossy()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind<T> {
    LogAnnealing { base: LogBaseRule<T> },
    CosineAnnealing,
    StepDecay { eta0: T, gamma: T, step_size: usize },
    Constant { eta0: T },
}

impl<T> ScheduleKind<T> {
    /// Short name used in file names and CSV metadata.
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::LogAnnealing { .. } => "log",
            ScheduleKind::CosineAnnealing => "cosine",
            ScheduleKind::StepDecay { .. } => "step",
            ScheduleKind::Constant { .. } => "constant",
        }
    }

    pub fn is_annealing(&self) -> bool {
        matches!(self, ScheduleKind::LogAnnealing { .. } | ScheduleKind::CosineAnnealing)
    }
}

/// A validated schedule description.
///
/// The restart policy and warmup only apply to the annealing kinds; step decay
/// and constant schedules ignore them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec<T> {
    kind: ScheduleKind<T>,
    restart: RestartPolicy<T>,
    warmup: WarmupConfig<T>,
}

impl<T: Scalar> ScheduleSpec<T> {
    pub fn new(kind: ScheduleKind<T>, restart: RestartPolicy<T>, warmup: WarmupConfig<T>) -> Result<Self> {
        match kind {
            ScheduleKind::LogAnnealing { base } => {
                restart.validate()?;
                base.resolve(&restart.cycle())?;
            }
            ScheduleKind::CosineAnnealing => restart.validate()?,
            ScheduleKind::StepDecay { eta0, gamma, step_size } => {
                if !(eta0 > T::zero() && eta0.is_finite()) {
                    return invalid("eta0", format!("must be finite and > 0, got {eta0}"));
                }
                if !(gamma > T::zero() && gamma < T::one()) {
                    return invalid("gamma", format!("must lie in (0, 1), got {gamma}"));
                }
                if step_size < 1 {
                    return invalid("step_size", "must be >= 1");
                }
            }
            ScheduleKind::Constant { eta0 } => {
                // Zero is allowed: it freezes training, which is a useful control.
                if !(eta0 >= T::zero() && eta0.is_finite()) {
                    return invalid("eta0", format!("must be finite and >= 0, got {eta0}"));
                }
            }
        }
        if kind.is_annealing() {
            let start = warmup.warmup_start_lr;
            if !(start > T::zero()) {
                return invalid("warmup_start_lr", format!("must be > 0, got {start}"));
            }
            if start > restart.restart_lr {
                return invalid(
                    "warmup_start_lr",
                    format!("must be <= restart_lr ({}), got {start}", restart.restart_lr),
                );
            }
        }
        Ok(Self { kind, restart, warmup })
    }

    /// Constant schedule; restart and warmup settings are irrelevant.
    pub fn constant(eta0: T) -> Result<Self> {
        Self::new(
            ScheduleKind::Constant { eta0 },
            placeholder_policy(),
            WarmupConfig::none(),
        )
    }

    pub fn step_decay(eta0: T, gamma: T, step_size: usize) -> Result<Self> {
        Self::new(
            ScheduleKind::StepDecay { eta0, gamma, step_size },
            placeholder_policy(),
            WarmupConfig::none(),
        )
    }

    pub fn kind(&self) -> &ScheduleKind<T> {
        &self.kind
    }

    pub fn restart(&self) -> &RestartPolicy<T> {
        &self.restart
    }

    pub fn warmup(&self) -> &WarmupConfig<T> {
        &self.warmup
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Warmup epochs that precede the first cycle (zero for non-annealing kinds).
    pub fn effective_warmup(&self) -> usize {
        if self.kind.is_annealing() {
            self.warmup.warmup_epochs
        } else {
            0
        }
    }

    /// Rate for an annealing kind at the given cycle position.
    fn annealing_lr(&self, t_cur: usize, t_i: usize) -> T {
        let cycle = self.restart.cycle();
        let lr = match self.kind {
            ScheduleKind::LogAnnealing { base } => log_lr(&cycle, t_cur, t_i, &base),
            ScheduleKind::CosineAnnealing => cosine_lr(&cycle, t_cur, t_i),
            _ => unreachable!("annealing_lr called for a non-annealing kind"),
        };
        lr.expect("validated spec and scheduler-maintained cursor")
    }
}

fn placeholder_policy<T: Scalar>() -> RestartPolicy<T> {
    RestartPolicy {
        initial_decay_epochs: 1,
        restart_interval: 1,
        restart_interval_multiplier: T::one(),
        restart_lr: T::lit(0.1),
        min_decay_lr: T::lit(0.001),
    }
}

/// Cosine annealing: `eta_min + (eta_max - eta_min)/2 * (1 + cos(pi * t_cur / t_i))`.
pub fn cosine_lr<T: Scalar>(cycle: &CycleRange<T>, t_cur: usize, t_i: usize) -> Result<T> {
    if t_i == 0 || t_cur > t_i {
        return Err(ScheduleError::InvalidCycle { t_cur, t_i });
    }
    let half = T::lit(0.5);
    let frac = T::from_count(t_cur) / T::from_count(t_i);
    let wave = T::one() + (T::PI() * frac).cos();
    Ok(cycle.eta_min + half * (cycle.eta_max - cycle.eta_min) * wave)
}

/// Cyclical log annealing:
/// `| eta_min + (eta_max - eta_min)/2 * (1 + log_b(pi * t_i / t_cur)) |`.
///
/// The argument of the logarithm is at least `pi` inside a cycle, so the rate
/// starts above the cosine curve (exceeding `eta_max` for long enough cycles)
/// and never quite reaches `eta_min`.
pub fn log_lr<T: Scalar>(cycle: &CycleRange<T>, t_cur: usize, t_i: usize, base_rule: &LogBaseRule<T>) -> Result<T> {
    if t_cur == 0 {
        return Err(ScheduleError::ZeroCursor);
    }
    if t_i == 0 || t_cur > t_i {
        return Err(ScheduleError::InvalidCycle { t_cur, t_i });
    }
    let base = base_rule.resolve(cycle)?;
    let arg = T::PI() * T::from_count(t_i) / T::from_count(t_cur);
    let log_b = arg.ln() / base.ln();
    let half = T::lit(0.5);
    Ok((cycle.eta_min + half * (cycle.eta_max - cycle.eta_min) * (T::one() + log_b)).abs())
}

/// Geometric staircase: `eta0 * gamma^floor(epoch / step_size)`.
pub fn step_decay_lr<T: Scalar>(eta0: T, gamma: T, step_size: usize, epoch: usize) -> Result<T> {
    if step_size == 0 {
        return invalid("step_size", "must be >= 1");
    }
    if !(gamma > T::zero() && gamma < T::one()) {
        return invalid("gamma", format!("must lie in (0, 1), got {gamma}"));
    }
    let steps = i32::try_from(epoch / step_size).unwrap_or(i32::MAX);
    Ok(eta0 * gamma.powi(steps))
}

/// Linear ramp from `warmup_start_lr` at epoch 0 towards `target_lr` at
/// epoch `warmup_epochs` (which the schedule proper takes over).
pub fn warmup_lr<T: Scalar>(warmup: &WarmupConfig<T>, target_lr: T, epoch: usize) -> Result<T> {
    if !warmup.is_active(epoch) {
        return Err(ScheduleError::WarmupInactive {
            epoch,
            warmup_epochs: warmup.warmup_epochs,
        });
    }
    let frac = T::from_count(epoch) / T::from_count(warmup.warmup_epochs);
    Ok(warmup.warmup_start_lr + frac * (target_lr - warmup.warmup_start_lr))
}

/// Cursor over the warm-restart timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleState {
    pub cycle_index: usize,
    /// 1-based position inside the current cycle.
    pub t_cur: usize,
    /// Length of the current cycle.
    pub t_i: usize,
    pub global_epoch: usize,
    /// Set when the last `advance` started a new cycle.
    pub restarted: bool,
}

impl ScheduleState {
    pub fn fresh<T: Scalar>(policy: &RestartPolicy<T>) -> Self {
        Self {
            cycle_index: 0,
            t_cur: 1,
            t_i: policy.cycle_length(0),
            global_epoch: 0,
            restarted: false,
        }
    }

    /// Moves one epoch forward, rolling over into the next cycle when the
    /// current one is exhausted.
    #[must_use]
    pub fn advance<T: Scalar>(self, policy: &RestartPolicy<T>) -> Self {
        let global_epoch = self.global_epoch + 1;
        if self.t_cur + 1 > self.t_i {
            let cycle_index = self.cycle_index + 1;
            Self {
                cycle_index,
                t_cur: 1,
                t_i: policy.cycle_length(cycle_index),
                global_epoch,
                restarted: true,
            }
        } else {
            Self {
                t_cur: self.t_cur + 1,
                global_epoch,
                restarted: false,
                ..self
            }
        }
    }
}

/// Stateful, epoch-by-epoch view of a schedule.
#[derive(Debug, Clone)]
pub struct Scheduler<T> {
    spec: ScheduleSpec<T>,
    epoch: usize,
    /// Cycle cursor; only meaningful once warmup is over.
    state: ScheduleState,
}

impl<T: Scalar> Scheduler<T> {
    pub fn new(spec: ScheduleSpec<T>) -> Self {
        let state = ScheduleState::fresh(&spec.restart);
        Self { spec, epoch: 0, state }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn state(&self) -> &ScheduleState {
        &self.state
    }

    /// Rate for the current epoch.
    pub fn lr(&self) -> T {
        let warm = self.spec.effective_warmup();
        if self.epoch < warm {
            return warmup_lr(&self.spec.warmup, self.spec.restart.restart_lr, self.epoch)
                .expect("epoch inside warmup");
        }
        match self.spec.kind {
            ScheduleKind::Constant { eta0 } => eta0,
            ScheduleKind::StepDecay { eta0, gamma, step_size } => {
                step_decay_lr(eta0, gamma, step_size, self.epoch).expect("validated spec")
            }
            _ => self.spec.annealing_lr(self.state.t_cur, self.state.t_i),
        }
    }

    /// Moves to the next epoch.
    pub fn step(&mut self) {
        if self.epoch >= self.spec.effective_warmup() && self.spec.kind.is_annealing() {
            self.state = self.state.advance(&self.spec.restart);
        }
        self.epoch += 1;
    }
}

/// Rate at `epoch`, computed by locating the cycle directly rather than
/// stepping through every earlier epoch.
pub fn lr_at<T: Scalar>(spec: &ScheduleSpec<T>, epoch: usize) -> T {
    match spec.kind {
        ScheduleKind::Constant { eta0 } => eta0,
        ScheduleKind::StepDecay { eta0, gamma, step_size } => {
            step_decay_lr(eta0, gamma, step_size, epoch).expect("validated spec")
        }
        _ => {
            let warm = spec.warmup.warmup_epochs;
            if epoch < warm {
                return warmup_lr(&spec.warmup, spec.restart.restart_lr, epoch).expect("epoch inside warmup");
            }
            let (_, t_cur, t_i) = locate_cycle(&spec.restart, epoch - warm);
            spec.annealing_lr(t_cur, t_i)
        }
    }
}

/// Cycle index, 1-based in-cycle position and cycle length for an epoch
/// counted from the start of the first cycle.
pub fn locate_cycle<T: Scalar>(policy: &RestartPolicy<T>, mut epoch: usize) -> (usize, usize, usize) {
    let mut index = 0;
    loop {
        let len = policy.cycle_length(index);
        if epoch < len {
            return (index, epoch + 1, len);
        }
        epoch -= len;
        index += 1;
    }
}

/// `(epoch, lr)` for epochs `0..epochs`.
pub fn dump_schedule<T: Scalar>(spec: &ScheduleSpec<T>, epochs: usize) -> Vec<(usize, T)> {
    (0..epochs).map(|e| (e, lr_at(spec, e))).collect()
}

/// Writes a dump as CSV with header `epoch,lr`.
pub fn write_schedule_csv<T: Scalar, W: Write + ?Sized>(out: &mut W, rows: &[(usize, T)]) -> io::Result<()> {
    writeln!(out, "epoch,lr")?;
    for (epoch, lr) in rows {
        writeln!(out, "{},{}", epoch, fmt_sig(lr.to_f64_lossy(), 10))?;
    }
    Ok(())
}
