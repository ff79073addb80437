//! Analytic test objectives with exact gradients.
//!
//! Closed forms (n = dimension):
//!
//! * Ackley: `-20 exp(-0.2 sqrt(mean x_i^2)) - exp(mean cos(2 pi x_i)) + 20 + e`
//! * Rastrigin: `10 n + sum(x_i^2 - 10 cos(2 pi x_i))`
//! * Griewank: `1 + sum(x_i^2) / 4000 - prod cos(x_i / sqrt(i))`, `i` from 1
//! * Quadratic: `x^T A x / 2` for a symmetric positive-definite `A`

use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LandscapeError {
    #[error("no analytic hessian for {0}; use finite differences")]
    UnsupportedHessian(&'static str),
    #[error("quadratic matrix must be symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("finite-difference step must lie in (0, 1), got {0}")]
    InvalidStep(f64),
}

pub type Result<T, E = LandscapeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum LandscapeKind<T> {
    Ackley,
    Griewank,
    Rastrigin,
    Quadratic(Matrix<T>),
}

impl<T: Scalar> LandscapeKind<T> {
    /// Checks symmetry and positive definiteness (all LU pivots of the
    /// unpivoted Gaussian elimination positive, i.e. Sylvester's criterion).
    pub fn quadratic(a: Matrix<T>) -> Result<Self> {
        if !a.is_symmetric(T::lit(1e-12)) {
            return Err(LandscapeError::NotPositiveDefinite);
        }
        let n = a.rows();
        let mut m = a.clone();
        for k in 0..n {
            let pivot = m[(k, k)];
            if !(pivot > T::zero()) {
                return Err(LandscapeError::NotPositiveDefinite);
            }
            for r in (k + 1)..n {
                let f = m[(r, k)] / pivot;
                for c in k..n {
                    let v = m[(k, c)];
                    m[(r, c)] = m[(r, c)] - f * v;
                }
            }
        }
        Ok(LandscapeKind::Quadratic(a))
    }

    pub fn name(&self) -> &'static str {
        match self {
            LandscapeKind::Ackley => "ackley",
            LandscapeKind::Griewank => "griewank",
            LandscapeKind::Rastrigin => "rastrigin",
            LandscapeKind::Quadratic(_) => "quadratic",
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if let LandscapeKind::Quadratic(a) = self {
            if a.rows() != x.len() {
                return Err(LandscapeError::DimensionMismatch {
                    expected: a.rows(),
                    got: x.len(),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        let two_pi = T::lit(2.0) * T::PI();
        let n = T::from_count(x.len());
        Ok(match self {
            LandscapeKind::Ackley => {
                let sq = x.iter().map(|&v| v * v).sum::<T>() / n;
                let cs = x.iter().map(|&v| (two_pi * v).cos()).sum::<T>() / n;
                -T::lit(20.0) * (-T::lit(0.2) * sq.sqrt()).exp() - cs.exp() + T::lit(20.0) + T::E()
            }
            LandscapeKind::Rastrigin => {
                T::lit(10.0) * n + x.iter().map(|&v| v * v - T::lit(10.0) * (two_pi * v).cos()).sum::<T>()
            }
            LandscapeKind::Griewank => {
                let sum = x.iter().map(|&v| v * v).sum::<T>() / T::lit(4000.0);
                let prod = x
                    .iter()
                    .enumerate()
                    .fold(T::one(), |p, (i, &v)| p * (v / T::from_count(i + 1).sqrt()).cos());
                T::one() + sum - prod
            }
            LandscapeKind::Quadratic(a) => {
                let ax = a.mul_vec(x);
                T::lit(0.5) * x.iter().zip(&ax).map(|(&u, &v)| u * v).sum::<T>()
            }
        })
    }

    pub fn grad(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        let two_pi = T::lit(2.0) * T::PI();
        let n = T::from_count(x.len());
        Ok(match self {
            LandscapeKind::Ackley => {
                let r = (x.iter().map(|&v| v * v).sum::<T>() / n).sqrt();
                let cs = x.iter().map(|&v| (two_pi * v).cos()).sum::<T>() / n;
                let radial = T::lit(4.0) * (-T::lit(0.2) * r).exp();
                let wave = cs.exp() * two_pi / n;
                x.iter()
                    .map(|&v| {
                        // d r / d x_i = x_i / (n r); the radial term vanishes at the origin.
                        let dr = if r > T::zero() { v / (n * r) } else { T::zero() };
                        radial * dr + wave * (two_pi * v).sin()
                    })
                    .collect()
            }
            LandscapeKind::Rastrigin => x
                .iter()
                .map(|&v| T::lit(2.0) * v + T::lit(10.0) * two_pi * (two_pi * v).sin())
                .collect(),
            LandscapeKind::Griewank => {
                let scaled: Vec<(T, T)> = x
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let s = T::from_count(i + 1).sqrt();
                        (v / s, s)
                    })
                    .collect();
                (0..x.len())
                    .map(|k| {
                        let others = scaled
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != k)
                            .fold(T::one(), |p, (_, &(u, _))| p * u.cos());
                        let (u, s) = scaled[k];
                        x[k] / T::lit(2000.0) + u.sin() / s * others
                    })
                    .collect()
            }
            LandscapeKind::Quadratic(a) => a.mul_vec(x),
        })
    }

    pub fn hessian(&self, x: &[T]) -> Result<Matrix<T>> {
        self.check_dim(x)?;
        match self {
            LandscapeKind::Quadratic(a) => Ok(a.clone()),
            LandscapeKind::Rastrigin => {
                let two_pi = T::lit(2.0) * T::PI();
                let c = T::lit(10.0) * two_pi * two_pi;
                let diag: Vec<T> = x.iter().map(|&v| T::lit(2.0) + c * (two_pi * v).cos()).collect();
                Ok(Matrix::from_diag(&diag))
            }
            other => Err(LandscapeError::UnsupportedHessian(other.name())),
        }
    }
}

/// Central-difference step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSpec<T> {
    pub step: T,
}

impl<T: Scalar> Default for FdSpec<T> {
    fn default() -> Self {
        Self { step: T::lit(1e-5) }
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_grad<T: Scalar>(kind: &LandscapeKind<T>, x: &[T], spec: FdSpec<T>) -> Result<Vec<T>> {
    let h = spec.step;
    if !(h > T::zero() && h < T::one()) {
        return Err(LandscapeError::InvalidStep(h.to_f64_lossy()));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = kind.eval(&probe)?;
        probe[i] = orig - h;
        let down = kind.eval(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (T::lit(2.0) * h));
    }
    Ok(out)
}
