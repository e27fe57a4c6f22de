//! Globalized inexact semismooth Newton method for the dual system
//! `V(ξ) = 0` that defines one stochastic proximal point step.
//!
//! For a batch `S = (κ(1), …, κ(b))` with stacked rows `A_S = (1/b)[A_κ(i)]`,
//!
//! ```text
//! z(ξ)  = x - α A_Sᵀ ξ + v
//! V_i(ξ) = ∇f̂*_κ(i)(ξ_i) - A_κ(i) prox_{αφ}(z(ξ))
//! U(ξ)  = Σ f̂*_κ(i)(ξ_i) + (b/2α)||z(ξ)||² - (b/α) env_{αφ}(z(ξ))
//! ```
//!
//! `V = ∇U` and `U` is strongly convex, so Newton steps on `V` are
//! globalized with an Armijo search on `U`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, dot, norm};
use crate::model::Problem;

/// Absolute slack, relative to `|U|`, granted to the sufficient-decrease
/// test so that roundoff in `U` cannot reject a step near the solution.
const ARMIJO_ROUNDOFF: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonParams {
    /// Armijo constant `γ̂ ∈ (0, 1/2)`.
    pub gamma_hat: f64,
    /// Absolute cap `η` on the linear-solve residual.
    pub eta: f64,
    /// Backtracking factor `ρ`.
    pub rho: f64,
    /// Forcing exponent `τ`.
    pub tau: f64,
    /// Regularization weights `τ₁`, `τ₂` of `η_j = τ₁ min{τ₂, ||V||}`.
    pub tau1: f64,
    pub tau2: f64,
    pub max_iter: usize,
    /// Stopping tolerance on `||V(ξ)||`.
    pub eps_sub: f64,
    pub max_backtracks: u32,
    /// Dual dimensions up to this size are solved by Cholesky; larger ones
    /// by conjugate gradients.
    pub direct_limit: usize,
}

impl Default for NewtonParams {
    fn default() -> Self {
        NewtonParams {
            gamma_hat: 0.4,
            eta: 1e-5,
            rho: 0.5,
            tau: 0.9,
            tau1: 0.5,
            tau2: 2e-4,
            max_iter: 100,
            eps_sub: 1e-3,
            max_backtracks: 60,
            direct_limit: 64,
        }
    }
}

impl NewtonParams {
    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        let ok = self.gamma_hat > 0.0
            && self.gamma_hat < 0.5
            && open01(self.eta)
            && open01(self.rho)
            && self.tau > 0.0
            && self.tau <= 1.0
            && open01(self.tau1)
            && open01(self.tau2)
            && self.eps_sub >= 0.0
            && self.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("Newton parameters out of range: {self:?}")))
        }
    }
}

/// Frozen data of one subproblem: anchor `x`, shift `v`, step `α` and the
/// sampled batch (duplicates kept as separate blocks).
#[derive(Clone, Debug)]
pub struct SubproblemContext<'a> {
    problem: &'a Problem,
    anchor: &'a [f64],
    shift: &'a [f64],
    alpha: f64,
    batch: &'a [usize],
    /// Design row behind each dual coordinate.
    rows: Vec<usize>,
    /// Sample behind each dual coordinate.
    owners: Vec<usize>,
}

/// Quantities shared by `V`, `U` and `W` at one dual point.
struct DualEval {
    z: Vec<f64>,
    prox: Vec<f64>,
}

impl<'a> SubproblemContext<'a> {
    pub fn new(
        problem: &'a Problem,
        anchor: &'a [f64],
        shift: &'a [f64],
        alpha: f64,
        batch: &'a [usize],
    ) -> Result<Self> {
        problem.check_point(anchor)?;
        problem.check_point(shift)?;
        problem.check_batch(batch)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {alpha}")));
        }
        let mut rows = Vec::new();
        let mut owners = Vec::new();
        for &i in batch {
            for r in problem.block_rows(i) {
                rows.push(r);
                owners.push(i);
            }
        }
        Ok(SubproblemContext {
            problem,
            anchor,
            shift,
            alpha,
            batch,
            rows,
            owners,
        })
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn batch(&self) -> &[usize] {
        self.batch
    }

    /// `m_S`.
    pub fn dual_dim(&self) -> usize {
        self.rows.len()
    }

    /// Row-to-sample map of the dual coordinates.
    pub fn dual_owners(&self) -> &[usize] {
        &self.owners
    }

    pub fn cold_start(&self) -> Vec<f64> {
        vec![self.problem.loss().conj_start(); self.dual_dim()]
    }

    pub fn in_domain(&self, xi: &[f64]) -> bool {
        let loss = self.problem.loss();
        xi.len() == self.dual_dim() && xi.iter().all(|&v| loss.in_conj_domain(v))
    }

    fn check_dual(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.dual_dim() {
            return Err(Error::invalid(format!(
                "dual point has length {}, expected {}",
                xi.len(),
                self.dual_dim()
            )));
        }
        let loss = self.problem.loss();
        match xi.iter().find(|&&v| !loss.in_conj_domain(v)) {
            Some(&value) => Err(Error::DomainViolation {
                family: loss.name(),
                value,
            }),
            None => Ok(()),
        }
    }

    /// `z(ξ) = x - α A_Sᵀ ξ + v`.
    pub fn z(&self, xi: &[f64]) -> Vec<f64> {
        let design = self.problem.design();
        let coef = -self.alpha / self.batch.len() as f64;
        let mut z: Vec<f64> = self.anchor.iter().zip(self.shift).map(|(a, s)| a + s).collect();
        for (k, &r) in self.rows.iter().enumerate() {
            design.row_axpy(r, coef * xi[k], &mut z);
        }
        z
    }

    /// Primal recovery `x⁺ = prox_{αφ}(z(ξ))`.
    pub fn primal(&self, xi: &[f64]) -> Vec<f64> {
        self.problem.regularizer().prox(&self.z(xi), self.alpha)
    }

    fn evaluate(&self, xi: &[f64]) -> Result<DualEval> {
        self.check_dual(xi)?;
        let z = self.z(xi);
        let prox = self.problem.regularizer().prox(&z, self.alpha);
        Ok(DualEval { z, prox })
    }

    fn v_from(&self, xi: &[f64], ev: &DualEval) -> Result<Vec<f64>> {
        let design = self.problem.design();
        let loss = self.problem.loss();
        self.rows
            .iter()
            .zip(&self.owners)
            .zip(xi)
            .map(|((&r, &i), &x)| {
                let g = loss.conj_grad(x, self.problem.target(r), self.problem.gamma(i))?;
                Ok(g - design.row_dot(r, &ev.prox))
            })
            .collect()
    }

    fn u_from(&self, xi: &[f64], ev: &DualEval) -> Result<f64> {
        let loss = self.problem.loss();
        let mut conj = 0.0;
        for ((&r, &i), &x) in self.rows.iter().zip(&self.owners).zip(xi) {
            conj += loss.conj_value(x, self.problem.target(r), self.problem.gamma(i))?;
        }
        let b = self.batch.len() as f64;
        let zz = dot(&ev.z, &ev.z);
        let env = self.problem.regularizer().moreau_env(&ev.z, self.alpha);
        Ok(conj + b / (2.0 * self.alpha) * zz - b / self.alpha * env)
    }

    /// `V(ξ) = ∇U(ξ)`.
    pub fn eval_v(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let ev = self.evaluate(xi)?;
        self.v_from(xi, &ev)
    }

    /// The merit function `U(ξ)`.
    pub fn eval_u(&self, xi: &[f64]) -> Result<f64> {
        let ev = self.evaluate(xi)?;
        self.u_from(xi, &ev)
    }

    /// `W = Diag(H_i(ξ_i)) + αb A_S D A_Sᵀ`, `D ∈ ∂prox_{αφ}(z(ξ))`.
    pub fn assemble_w(&self, xi: &[f64]) -> Result<NewtonMatrix<'_>> {
        let ev = self.evaluate(xi)?;
        self.w_from(xi, &ev)
    }

    fn w_from(&self, xi: &[f64], ev: &DualEval) -> Result<NewtonMatrix<'_>> {
        let loss = self.problem.loss();
        let mut diag = Vec::with_capacity(xi.len());
        for ((&r, &i), &x) in self.rows.iter().zip(&self.owners).zip(xi) {
            diag.push(loss.conj_hess(x, self.problem.target(r), self.problem.gamma(i))?);
        }
        let weights = self.problem.regularizer().prox_jacobian(&ev.z, self.alpha);
        Ok(NewtonMatrix {
            ctx: self,
            diag,
            weights,
            coef: self.alpha / self.batch.len() as f64,
        })
    }
}

/// The generalized Jacobian `W` as an operator, with a dense fallback.
pub struct NewtonMatrix<'c> {
    ctx: &'c SubproblemContext<'c>,
    diag: Vec<f64>,
    /// Diagonal of the prox Jacobian `D` (length `n`).
    weights: Vec<f64>,
    /// `αb · (1/b)² = α/b`.
    coef: f64,
}

impl NewtonMatrix<'_> {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn conj_hess_diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn prox_weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(W + shift I) y`.
    pub fn apply_shifted(&self, y: &[f64], shift: f64) -> Vec<f64> {
        let design = self.ctx.problem.design();
        let mut t = vec![0.0; self.weights.len()];
        for (k, &r) in self.ctx.rows.iter().enumerate() {
            design.row_axpy(r, y[k], &mut t);
        }
        t.iter_mut().zip(&self.weights).for_each(|(a, w)| *a *= w);
        self.ctx
            .rows
            .iter()
            .enumerate()
            .map(|(k, &r)| (self.diag[k] + shift) * y[k] + self.coef * design.row_dot(r, &t))
            .collect()
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        self.apply_shifted(y, 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let design = self.ctx.problem.design();
        let rows = &self.ctx.rows;
        let m = rows.len();
        let mut w = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let v = self.coef * design.row_weighted_dot(rows[a], rows[b], &self.weights);
                w[(a, b)] = v;
                w[(b, a)] = v;
            }
            w[(a, a)] += self.diag[a];
        }
        w
    }
}

/// Result of one regularized Newton solve.
#[derive(Clone, Debug)]
pub struct Direction {
    pub d: Vec<f64>,
    /// `||(W + η_j I) d + V||`.
    pub residual: f64,
    /// `η_j`.
    pub shift: f64,
    /// `min{η, ||V||^{1+τ}}`.
    pub residual_bound: f64,
    /// CG iterations, or `None` for a direct solve.
    pub cg_iterations: Option<usize>,
    /// CG hit its iteration cap and the dense solve took over.
    pub cg_fallback: bool,
}

/// Solves `(W + η_j I) d = -V` with `η_j = τ₁ min{τ₂, ||V||}` to residual
/// `min{η, ||V||^{1+τ}}`.
pub fn newton_direction(w: &NewtonMatrix<'_>, v: &[f64], params: &NewtonParams) -> Result<Direction> {
    let m = v.len();
    if w.dim() != m {
        return Err(Error::invalid("Newton matrix and residual differ in size"));
    }
    let v_norm = norm(v);
    let shift = params.tau1 * params.tau2.min(v_norm);
    let bound = params.eta.min(v_norm.powf(1.0 + params.tau));
    if v_norm == 0.0 {
        return Ok(Direction {
            d: vec![0.0; m],
            residual: 0.0,
            shift,
            residual_bound: bound,
            cg_iterations: None,
            cg_fallback: false,
        });
    }
    let neg_v: Vec<f64> = v.iter().map(|a| -a).collect();

    let (d, cg_iterations, cg_fallback) = if m <= params.direct_limit {
        (dense_solve(w, &neg_v, shift)?, None, false)
    } else {
        match conjugate_gradient(|y| w.apply_shifted(y, shift), &neg_v, bound, 10 * m) {
            Some((d, it)) => (d, Some(it), false),
            None => (dense_solve(w, &neg_v, shift)?, None, true),
        }
    };
    let residual = {
        let wd = w.apply_shifted(&d, shift);
        norm(&wd.iter().zip(v).map(|(a, b)| a + b).collect::<Vec<_>>())
    };
    Ok(Direction {
        d,
        residual,
        shift,
        residual_bound: bound,
        cg_iterations,
        cg_fallback,
    })
}

fn dense_solve(w: &NewtonMatrix<'_>, rhs: &[f64], shift: f64) -> Result<Vec<f64>> {
    let mut a = w.to_dense();
    for k in 0..a.nrows() {
        a[(k, k)] += shift;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::invalid("Newton matrix is not positive definite"))?;
    Ok(chol.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec())
}

/// Outcome of the Armijo search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLength {
    pub beta: f64,
    pub backtracks: u32,
    /// `U(ξ + βd)`.
    pub merit: f64,
}

/// Smallest `ℓ` with `ξ + ρ^ℓ d` inside the conjugate domain and
/// `U(ξ + ρ^ℓ d) ≤ U(ξ) + γ̂ ρ^ℓ ⟨V(ξ), d⟩`.
pub fn armijo_search(
    ctx: &SubproblemContext<'_>,
    xi: &[f64],
    d: &[f64],
    merit: f64,
    v: &[f64],
    params: &NewtonParams,
) -> Result<StepLength> {
    let slope = dot(v, d);
    if !(slope < 0.0) {
        return Err(Error::invalid(format!(
            "Newton direction is not a descent direction (slope {slope:e})"
        )));
    }
    let slack = ARMIJO_ROUNDOFF * (1.0 + merit.abs());
    let mut beta = 1.0;
    let mut trial = vec![0.0; xi.len()];
    for backtracks in 0..=params.max_backtracks {
        for k in 0..xi.len() {
            trial[k] = xi[k] + beta * d[k];
        }
        if ctx.in_domain(&trial) {
            let u = ctx.eval_u(&trial)?;
            if u <= merit + params.gamma_hat * beta * slope + slack {
                return Ok(StepLength {
                    beta,
                    backtracks,
                    merit: u,
                });
            }
        }
        beta *= params.rho;
    }
    Err(Error::LineSearch {
        steps: params.max_backtracks,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
    /// `||V(ξ^j)||` for every iterate, including the returned one.
    pub residual_history: Vec<f64>,
    pub backtracks: u32,
    pub cg_iterations: usize,
    pub cg_fallbacks: usize,
    /// Iterations whose linear solve missed the forcing bound.
    pub forcing_violations: usize,
}

#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub xi: Vec<f64>,
    pub x_plus: Vec<f64>,
    pub stats: NewtonStats,
}

/// Runs the semismooth Newton iteration from `xi0` until
/// `||V(ξ)|| ≤ ε_sub`. With `ε_sub = 0` the solve is exact up to roundoff:
/// it stops once a step leaves `ξ` unchanged or `max_iter` is reached.
pub fn solve_subproblem(
    ctx: &SubproblemContext<'_>,
    params: &NewtonParams,
    xi0: Vec<f64>,
) -> Result<SubproblemSolution> {
    params.validate()?;
    let mut xi = xi0;
    let mut stats = NewtonStats::default();
    let mut ev = ctx.evaluate(&xi)?;
    let mut merit = ctx.u_from(&xi, &ev)?;
    loop {
        let v = ctx.v_from(&xi, &ev)?;
        let v_norm = norm(&v);
        stats.residual = v_norm;
        stats.residual_history.push(v_norm);
        if v_norm <= params.eps_sub {
            break;
        }
        let exact = params.eps_sub == 0.0;
        if stats.iterations >= params.max_iter {
            if exact {
                break;
            }
            return Err(Error::NewtonMaxIter {
                iterations: stats.iterations,
                residual: v_norm,
                tolerance: params.eps_sub,
            });
        }
        let w = ctx.w_from(&xi, &ev)?;
        let dir = newton_direction(&w, &v, params)?;
        stats.cg_iterations += dir.cg_iterations.unwrap_or(0);
        stats.cg_fallbacks += usize::from(dir.cg_fallback);
        if dir.residual > dir.residual_bound {
            stats.forcing_violations += 1;
        }
        let step = armijo_search(ctx, &xi, &dir.d, merit, &v, params)?;
        stats.backtracks += step.backtracks;
        let mut moved = false;
        for (x, d) in xi.iter_mut().zip(&dir.d) {
            let next = *x + step.beta * d;
            moved |= next != *x;
            *x = next;
        }
        if exact && !moved {
            break;
        }
        merit = step.merit;
        ev = ctx.evaluate(&xi)?;
        stats.iterations += 1;
    }
    let x_plus = ev.prox;
    Ok(SubproblemSolution { xi, x_plus, stats })
}
