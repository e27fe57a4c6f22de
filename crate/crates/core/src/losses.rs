//! Scalar loss families `f(z; b)` and the conjugate of their
//! strongly convex shift `f̂(z) = f(z) + (γ/2) z²`.
//!
//! A sample block `A_i` with several rows applies the family to each row
//! independently, so every oracle here is scalar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALLEY_TOL: f64 = 1e-12;
const HALLEY_MAX_ITER: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFamily {
    /// `ln(1 + exp(-z))`. Labels are folded into the data rows, so the
    /// per-row target is ignored.
    Logistic,
    /// `(z - b)² / 2`.
    Squared,
    /// `ln(1 + (z - b)² / ν)`, weakly convex with modulus `1/(4ν)`.
    StudentT { nu: f64 },
}

impl LossFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LossFamily::Logistic => "logistic",
            LossFamily::Squared => "squared",
            LossFamily::StudentT { .. } => "student_t",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossFamily::StudentT { nu } if !(nu > 0.0 && nu.is_finite()) => Err(Error::invalid(format!(
                "student_t degrees of freedom must be positive, got {nu}"
            ))),
            _ => Ok(()),
        }
    }

    /// Lipschitz constant of `f'`.
    pub fn smoothness(&self) -> f64 {
        match *self {
            LossFamily::Logistic => 0.25,
            LossFamily::Squared => 1.0,
            LossFamily::StudentT { nu } => 2.0 / nu,
        }
    }

    /// Smallest `γ` making `f + (γ/2)z²` convex.
    pub fn weak_convexity(&self) -> f64 {
        match *self {
            LossFamily::StudentT { nu } => 0.25 / nu,
            _ => 0.0,
        }
    }

    /// The `γ` used when none is given: zero for the convex families and
    /// `1/(2ν)` for Student-t.
    pub fn default_gamma(&self) -> f64 {
        match *self {
            LossFamily::StudentT { nu } => 0.5 / nu,
            _ => 0.0,
        }
    }

    pub fn check_gamma(&self, gamma: f64) -> Result<()> {
        match *self {
            LossFamily::Logistic | LossFamily::Squared if gamma != 0.0 => Err(Error::invalid(format!(
                "{} loss is convex and takes gamma = 0, got {gamma}",
                self.name()
            ))),
            LossFamily::StudentT { nu } if !(gamma > 0.25 / nu) => Err(Error::invalid(format!(
                "student_t needs gamma > 1/(4 nu) = {}, got {gamma}",
                0.25 / nu
            ))),
            _ => Ok(()),
        }
    }

    pub fn value(&self, z: f64, b: f64) -> f64 {
        match *self {
            LossFamily::Logistic => softplus(-z),
            LossFamily::Squared => 0.5 * (z - b) * (z - b),
            LossFamily::StudentT { nu } => ((z - b) * (z - b) / nu).ln_1p(),
        }
    }

    pub fn grad(&self, z: f64, b: f64) -> f64 {
        match *self {
            LossFamily::Logistic => {
                if z >= 0.0 {
                    let e = (-z).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + z.exp())
                }
            }
            LossFamily::Squared => z - b,
            LossFamily::StudentT { nu } => {
                let r = z - b;
                2.0 * r / (nu + r * r)
            }
        }
    }

    pub fn hess(&self, z: f64, b: f64) -> f64 {
        match *self {
            LossFamily::Logistic => {
                let s = -self.grad(z, b);
                s * (1.0 - s)
            }
            LossFamily::Squared => 1.0,
            LossFamily::StudentT { nu } => {
                let r2 = (z - b) * (z - b);
                2.0 * (nu - r2) / ((nu + r2) * (nu + r2))
            }
        }
    }

    /// Membership in the open domain of the conjugate.
    pub fn in_conj_domain(&self, xi: f64) -> bool {
        match self {
            LossFamily::Logistic => xi > -1.0 && xi < 0.0,
            _ => xi.is_finite(),
        }
    }

    /// Cold-start dual value, the centre of the conjugate domain.
    pub fn conj_start(&self) -> f64 {
        match self {
            LossFamily::Logistic => -0.5,
            _ => 0.0,
        }
    }

    fn check_domain(&self, xi: f64) -> Result<()> {
        if self.in_conj_domain(xi) {
            Ok(())
        } else {
            Err(Error::DomainViolation {
                family: self.name(),
                value: xi,
            })
        }
    }

    /// `∇f̂*(ξ)`, the maximiser of `ξ z - f̂(z)`.
    pub fn conj_grad(&self, xi: f64, b: f64, gamma: f64) -> Result<f64> {
        self.check_domain(xi)?;
        match *self {
            LossFamily::Logistic => Ok((1.0 + xi).ln() - (-xi).ln()),
            LossFamily::Squared => Ok((xi + b) / (1.0 + gamma)),
            LossFamily::StudentT { nu } => student_t_dual_root(xi, b, gamma, nu),
        }
    }

    /// An element of the generalized derivative of `∇f̂*` at `ξ`.
    pub fn conj_hess(&self, xi: f64, b: f64, gamma: f64) -> Result<f64> {
        self.check_domain(xi)?;
        match *self {
            LossFamily::Logistic => Ok(-1.0 / (xi * xi + xi)),
            LossFamily::Squared => Ok(1.0 / (1.0 + gamma)),
            LossFamily::StudentT { .. } => {
                let z = self.conj_grad(xi, b, gamma)?;
                Ok(1.0 / (self.hess(z, b) + gamma))
            }
        }
    }

    /// `f̂*(ξ)`.
    pub fn conj_value(&self, xi: f64, b: f64, gamma: f64) -> Result<f64> {
        self.check_domain(xi)?;
        match *self {
            LossFamily::Logistic => Ok(xlogx(1.0 + xi) + xlogx(-xi)),
            LossFamily::Squared => {
                let z = (xi + b) / (1.0 + gamma);
                Ok(xi * z - self.value(z, b) - 0.5 * gamma * z * z)
            }
            LossFamily::StudentT { .. } => {
                let z = self.conj_grad(xi, b, gamma)?;
                Ok(xi * z - self.value(z, b) - 0.5 * gamma * z * z)
            }
        }
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `t ln t` with `0 ln 0 = 0`.
fn xlogx(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// Unique real root of the cubic
/// `-γz³ + z²(x+2γb) + z(-2bx-2-γν-γb²) + (xν+xb²+2b) = 0`,
/// i.e. the maximiser of `x z - f(z) - (γ/2)z²` for the Student-t loss.
///
/// Halley's method on the cubic, safeguarded by a bracket: the cubic is
/// `(ν + (z-b)²)·g(z)` with `g(z) = x - f'(z) - γz` strictly decreasing,
/// and `|f'| ≤ 1/√ν` places the root in `[(x - 1/√ν)/γ, (x + 1/√ν)/γ]`.
pub fn student_t_dual_root(x: f64, b: f64, gamma: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) || !(gamma > 0.25 / nu) {
        return Err(Error::invalid(format!(
            "student_t conjugate needs nu > 0 and gamma > 1/(4 nu); got nu = {nu}, gamma = {gamma}"
        )));
    }
    if !x.is_finite() || !b.is_finite() {
        return Err(Error::invalid("student_t conjugate at a non-finite point"));
    }
    let c3 = -gamma;
    let c2 = x + 2.0 * gamma * b;
    let c1 = -2.0 * b * x - 2.0 - gamma * nu - gamma * b * b;
    let c0 = x * nu + x * b * b + 2.0 * b;
    let cubic = |z: f64| ((c3 * z + c2) * z + c1) * z + c0;
    let d1 = |z: f64| (3.0 * c3 * z + 2.0 * c2) * z + c1;
    let d2 = |z: f64| 6.0 * c3 * z + 2.0 * c2;
    let stationarity = |z: f64| {
        let r = z - b;
        x - 2.0 * r / (nu + r * r) - gamma * z
    };

    let slack = 1.0 / nu.sqrt();
    let mut lo = (x - slack) / gamma;
    let mut hi = (x + slack) / gamma;
    // One Newton step on the stationarity condition from z = b.
    let mut z = (b + (x - gamma * b) / (gamma + 2.0 / nu)).clamp(lo, hi);

    for _ in 0..HALLEY_MAX_ITER {
        let p = cubic(z);
        let scale = 1.0 + c0.abs() + c1.abs() * z.abs();
        if p.abs() <= HALLEY_TOL * scale || hi - lo <= f64::EPSILON * (1.0 + z.abs()) {
            break;
        }
        // p > 0 exactly where g > 0, i.e. left of the root.
        if p > 0.0 {
            lo = lo.max(z);
        } else {
            hi = hi.min(z);
        }
        let (p1, p2) = (d1(z), d2(z));
        let denom = 2.0 * p1 * p1 - p * p2;
        let mut next = if denom != 0.0 {
            z - 2.0 * p * p1 / denom
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        z = next;
    }

    if stationarity(z).abs() > 1e-10 {
        // Polish with a Newton step on g, kept inside the bracket.
        let r = z - b;
        let fpp = 2.0 * (nu - r * r) / ((nu + r * r) * (nu + r * r));
        let next = z + stationarity(z) / (fpp + gamma);
        if next.is_finite() && (lo..=hi).contains(&next) {
            z = next;
        }
    }
    Ok(z)
}
