//! Parameter-update rules: SGD with momentum, Adam, and a damped Newton step.
//!
//! The learning rate is always supplied by the caller (normally a schedule).
//! Every rule validates its inputs before touching any state, so a rejected
//! step leaves both parameters and optimizer state unchanged.

use thiserror::Error;

use crate::linalg::{Lu, Matrix};
use crate::scalar::Scalar;

/// Newton steps refuse Hessians whose 1-norm condition estimate exceeds this.
pub const MAX_HESSIAN_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("non-finite gradient at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("learning rate must be finite and >= 0, got {0}")]
    InvalidLearningRate(f64),
    #[error("hessian is not symmetric")]
    NonSymmetricHessian,
    #[error("singular hessian (condition estimate {condition:e})")]
    SingularHessian { condition: f64 },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = OptimError> = std::result::Result<T, E>;

/// Flat parameter vector `x_t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector<T>(pub Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

fn check_step<T: Scalar>(params: &[T], grads: &[T], lr: T) -> Result<()> {
    if grads.len() != params.len() {
        return Err(OptimError::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index });
    }
    if !(lr >= T::zero() && lr.is_finite()) {
        return Err(OptimError::InvalidLearningRate(lr.to_f64_lossy()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig<T> {
    pub momentum: T,
    pub dampening: T,
    pub weight_decay: T,
}

impl<T: Scalar> SgdConfig<T> {
    /// Plain gradient descent, `x <- x - lr * g`.
    pub fn plain() -> Self {
        Self {
            momentum: T::zero(),
            dampening: T::zero(),
            weight_decay: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v < T::one();
        if !unit(self.momentum) {
            return Err(OptimError::InvalidConfig(format!(
                "momentum {} not in [0, 1)",
                self.momentum
            )));
        }
        if !unit(self.dampening) {
            return Err(OptimError::InvalidConfig(format!(
                "dampening {} not in [0, 1)",
                self.dampening
            )));
        }
        if !(self.weight_decay >= T::zero() && self.weight_decay.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "weight decay {} < 0",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub velocity: Vec<T>,
    pub initialized: bool,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            velocity: vec![T::zero(); n],
            initialized: false,
        }
    }
}

/// One SGD step with coupled weight decay and dampened momentum:
///
/// ```text
/// g <- grad + weight_decay * x
/// v <- momentum * v + (1 - dampening) * g     (v <- g on the first step)
/// x <- x - lr * v
/// ```
pub fn sgd_step<T: Scalar>(
    params: &mut ParamVector<T>,
    grads: &[T],
    lr: T,
    cfg: &SgdConfig<T>,
    state: &mut SgdState<T>,
) -> Result<()> {
    check_step(params.as_slice(), grads, lr)?;
    if state.velocity.len() != params.len() {
        return Err(OptimError::DimensionMismatch {
            expected: params.len(),
            got: state.velocity.len(),
        });
    }
    let keep = T::one() - cfg.dampening;
    for ((x, &g), v) in params.0.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        let g = if cfg.weight_decay > T::zero() {
            g + cfg.weight_decay * *x
        } else {
            g
        };
        *v = if state.initialized {
            cfg.momentum * *v + keep * g
        } else {
            g
        };
        *x = *x - lr * *v;
    }
    state.initialized = true;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub weight_decay: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            weight_decay: T::zero(),
        }
    }
}

impl<T: Scalar> AdamConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v < T::one();
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(OptimError::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > T::zero()) {
            return Err(OptimError::InvalidConfig("epsilon must be > 0".into()));
        }
        if !(self.weight_decay >= T::zero() && self.weight_decay.is_finite()) {
            return Err(OptimError::InvalidConfig("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_step<T: Scalar>(
    params: &mut ParamVector<T>,
    grads: &[T],
    lr: T,
    cfg: &AdamConfig<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    check_step(params.as_slice(), grads, lr)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(OptimError::DimensionMismatch {
            expected: params.len(),
            got: state.m.len(),
        });
    }
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = T::one() - cfg.beta1.powi(t);
    let c2 = T::one() - cfg.beta2.powi(t);
    for (i, (x, &g)) in params.0.iter_mut().zip(grads).enumerate() {
        let g = if cfg.weight_decay > T::zero() {
            g + cfg.weight_decay * *x
        } else {
            g
        };
        let m = cfg.beta1 * state.m[i] + (T::one() - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (T::one() - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        *x = *x - lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Newton step `x <- x - lr * H^-1 grad`, via an LU solve.
pub fn newton_step<T: Scalar>(params: &mut ParamVector<T>, grad: &[T], hessian: &Matrix<T>, lr: T) -> Result<()> {
    check_step(params.as_slice(), grad, lr)?;
    let n = params.len();
    if !hessian.is_square() || hessian.rows() != n {
        return Err(OptimError::DimensionMismatch {
            expected: n,
            got: hessian.rows(),
        });
    }
    if !hessian.is_symmetric(T::lit(1e-10)) {
        return Err(OptimError::NonSymmetricHessian);
    }
    let lu = Lu::factor(hessian).ok_or(OptimError::SingularHessian {
        condition: f64::INFINITY,
    })?;
    let condition = lu.condition_one(hessian).to_f64_lossy();
    if !(condition <= MAX_HESSIAN_CONDITION) {
        return Err(OptimError::SingularHessian { condition });
    }
    let dir = lu.solve(grad);
    for (x, d) in params.0.iter_mut().zip(dir) {
        *x = *x - lr * d;
    }
    Ok(())
}

/// First-order optimizer choice for training loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerConfig<T> {
    Sgd(SgdConfig<T>),
    Adam(AdamConfig<T>),
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Sgd(c) => c.validate(),
            OptimizerConfig::Adam(c) => c.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd(_) => "sgd",
            OptimizerConfig::Adam(_) => "adam",
        }
    }
}

/// An optimizer bound to its state for a parameter vector of fixed length.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd(SgdConfig<T>, SgdState<T>),
    Adam(AdamConfig<T>, AdamState<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig<T>, n: usize) -> Result<Self> {
        config.validate()?;
        Ok(match config {
            OptimizerConfig::Sgd(c) => Optimizer::Sgd(c, SgdState::new(n)),
            OptimizerConfig::Adam(c) => Optimizer::Adam(c, AdamState::new(n)),
        })
    }

    pub fn step(&mut self, params: &mut ParamVector<T>, grads: &[T], lr: T) -> Result<()> {
        match self {
            Optimizer::Sgd(cfg, state) => sgd_step(params, grads, lr, cfg, state),
            Optimizer::Adam(cfg, state) => adam_step(params, grads, lr, cfg, state),
        }
    }
}
