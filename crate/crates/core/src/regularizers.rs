//! Convex regularizers with prox, Moreau envelope and a generalized
//! Jacobian of the prox.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Zero,
    /// `λ ||x||_1`.
    L1 {
        lambda: f64,
    },
    /// `λ ||x||_1 + (μ/2) ||x||²`.
    L1PlusRidge {
        lambda: f64,
        ridge: f64,
    },
}

impl Regularizer {
    pub fn l1(lambda: f64) -> Self {
        Regularizer::L1 { lambda }
    }

    pub fn validate(&self) -> Result<()> {
        let (lambda, ridge) = self.params();
        if !(lambda >= 0.0 && lambda.is_finite() && ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::invalid(format!(
                "regularizer weights must be finite and nonnegative (lambda = {lambda}, ridge = {ridge})"
            )));
        }
        Ok(())
    }

    /// `(λ, μ)`.
    pub fn params(&self) -> (f64, f64) {
        match *self {
            Regularizer::Zero => (0.0, 0.0),
            Regularizer::L1 { lambda } => (lambda, 0.0),
            Regularizer::L1PlusRidge { lambda, ridge } => (lambda, ridge),
        }
    }

    /// Strong convexity modulus.
    pub fn strong_convexity(&self) -> f64 {
        self.params().1
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (lambda, ridge) = self.params();
        let l1: f64 = if lambda > 0.0 {
            x.iter().map(|v| v.abs()).sum()
        } else {
            0.0
        };
        let l2: f64 = if ridge > 0.0 {
            x.iter().map(|v| v * v).sum()
        } else {
            0.0
        };
        lambda * l1 + 0.5 * ridge * l2
    }

    /// Scalar prox with step `alpha`: soft-threshold at `αλ`, then shrink
    /// by `1/(1+αμ)`.
    #[inline]
    pub fn prox_scalar(&self, x: f64, alpha: f64) -> f64 {
        let (lambda, ridge) = self.params();
        soft_threshold(x, alpha * lambda) / (1.0 + alpha * ridge)
    }

    #[inline]
    pub fn prox_jacobian_scalar(&self, x: f64, alpha: f64) -> f64 {
        let (lambda, ridge) = self.params();
        // Ties |x| = αλ map to 0.
        if lambda > 0.0 && x.abs() <= alpha * lambda {
            0.0
        } else {
            1.0 / (1.0 + alpha * ridge)
        }
    }

    pub fn prox(&self, x: &[f64], alpha: f64) -> Vec<f64> {
        x.iter().map(|&v| self.prox_scalar(v, alpha)).collect()
    }

    /// Diagonal of an element of the Clarke Jacobian of `prox_{αφ}` at `x`.
    pub fn prox_jacobian(&self, x: &[f64], alpha: f64) -> Vec<f64> {
        x.iter().map(|&v| self.prox_jacobian_scalar(v, alpha)).collect()
    }

    /// `env_{αφ}(x) = αφ(p) + ||x - p||²/2` with `p = prox_{αφ}(x)`.
    pub fn moreau_env(&self, x: &[f64], alpha: f64) -> f64 {
        if matches!(self, Regularizer::Zero) {
            return 0.0;
        }
        let p = self.prox(x, alpha);
        let gap: f64 = x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
        alpha * self.value(&p) + 0.5 * gap
    }

    /// Per-coordinate prox for the diagonal metric used by AdaGrad:
    /// coordinate `j` takes step `steps[j]`.
    pub fn prox_diag(&self, x: &[f64], steps: &[f64]) -> Vec<f64> {
        x.iter().zip(steps).map(|(&v, &s)| self.prox_scalar(v, s)).collect()
    }
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}
