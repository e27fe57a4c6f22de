//! Explicit comparison methods: proximal SVRG, SAGA, AdaGrad and
//! deterministic proximal gradient descent.

use serde::{Deserialize, Serialize};

use crate::driver::{anchor_update, fnat_from_gradient, vr_gradient, Sampler, Sampling};
use crate::error::{Error, Result};
use crate::model::Problem;
use crate::monitor::{Monitor, Reporter, RunOutcome, RunStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Svrg,
    Saga,
    Adagrad,
    ProxGd,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Svrg => "svrg",
            BaselineMethod::Saga => "saga",
            BaselineMethod::Adagrad => "adagrad",
            BaselineMethod::ProxGd => "prox_gd",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub alpha: f64,
    pub batch: usize,
    /// SVRG inner length; `N/b` when unset.
    pub inner_len: Option<usize>,
    /// AdaGrad damping `δ`.
    pub adagrad_delta: f64,
    /// Outer iterations (SVRG), epochs (SAGA, AdaGrad) or iterations
    /// (proximal gradient).
    pub outer_iters: usize,
    pub max_epochs: Option<f64>,
    pub sampling: Sampling,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            alpha: 1.0,
            batch: 1,
            inner_len: None,
            adagrad_delta: 1e-8,
            outer_iters: 50,
            max_epochs: None,
            sampling: Sampling::WithReplacement,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            problems.push(format!("step size must be positive, got {}", self.alpha));
        }
        if self.batch == 0 {
            problems.push("batch size must be at least 1".to_string());
        }
        if self.sampling == Sampling::WithoutReplacement && self.batch > n_samples {
            problems.push(format!("batch size exceeds N = {n_samples} without replacement"));
        }
        if self.inner_len == Some(0) {
            problems.push("inner loop length must be at least 1".to_string());
        }
        if !(self.adagrad_delta > 0.0) {
            problems.push("AdaGrad damping must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch).max(1)
    }
}

pub fn run_baseline(
    method: BaselineMethod,
    problem: &Problem,
    cfg: &BaselineConfig,
    x0: &[f64],
    monitor: &mut dyn Monitor,
) -> Result<RunOutcome> {
    problem.check_point(x0)?;
    cfg.validate(problem.n_samples())?;
    match method {
        BaselineMethod::Svrg => svrg_run(problem, cfg, x0, monitor),
        BaselineMethod::Saga => saga_run(problem, cfg, x0, monitor),
        BaselineMethod::Adagrad => adagrad_run(problem, cfg, x0, monitor),
        BaselineMethod::ProxGd => prox_gd_run(problem, cfg, x0, monitor),
    }
}

fn outcome(
    x: Vec<f64>,
    status: RunStatus,
    grad_evals: u64,
    outer: usize,
    cfg: &BaselineConfig,
    r: &Reporter<'_>,
) -> RunOutcome {
    RunOutcome {
        x,
        x_uniform: None,
        status,
        grad_evals,
        wall_time_s: r.elapsed_s(),
        outer_iters: outer,
        newton_iters: 0,
        retries: 0,
        final_alpha: cfg.alpha,
    }
}

fn prox_step(problem: &Problem, x: &mut [f64], g: &[f64], alpha: f64) {
    let reg = problem.regularizer();
    for (xi, gi) in x.iter_mut().zip(g) {
        *xi = reg.prox_scalar(*xi - alpha * gi, alpha);
    }
}

/// Failure of a gradient oracle ends the run with the last good iterate.
macro_rules! try_or_fail {
    ($e:expr, $x:expr, $evals:expr, $outer:expr, $cfg:expr, $rep:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => {
                let status = RunStatus::Failed(err.to_string());
                return Ok(outcome($x, status, $evals, $outer, $cfg, &$rep));
            }
        }
    };
}

/// Proximal SVRG with Option I snapshots.
pub fn svrg_run(problem: &Problem, cfg: &BaselineConfig, x0: &[f64], monitor: &mut dyn Monitor) -> Result<RunOutcome> {
    let n = problem.n_samples();
    let m = cfg.inner_len.unwrap_or_else(|| cfg.steps_per_epoch(n));
    let mut sampler = Sampler::new(cfg.seed, cfg.sampling);
    let mut rep = Reporter::new(monitor, cfg.max_epochs, n);
    let mut x = x0.to_vec();
    let mut evals = 0u64;
    if let Some(st) = rep.report(0, 0, evals, &x, 0, f64::NAN)? {
        return Ok(outcome(x, st, evals, 0, cfg, &rep));
    }
    for s in 0..cfg.outer_iters {
        let anchor = try_or_fail!(anchor_update(problem, &x), x, evals, s, cfg, rep);
        evals += n as u64;
        for _ in 0..m {
            let batch = sampler.sample_batch(n, cfg.batch)?;
            let u = try_or_fail!(vr_gradient(problem, &anchor, &batch, &x), x, evals, s, cfg, rep);
            evals += cfg.batch as u64;
            prox_step(problem, &mut x, &u, cfg.alpha);
        }
        if let Some(st) = rep.report(s + 1, 0, evals, &x, 0, f64::NAN)? {
            return Ok(outcome(x, st, evals, s + 1, cfg, &rep));
        }
    }
    Ok(outcome(x, RunStatus::Completed, evals, cfg.outer_iters, cfg, &rep))
}

/// SAGA gradient table stored as one scalar `ℓ'(a_r·φ_i, b_r)` per design
/// row, together with the running mean `(1/N) Σ_i A_iᵀ ∇f_i(A_i φ_i)`.
#[derive(Clone, Debug)]
pub struct SagaTable {
    table: Vec<f64>,
    mean: Vec<f64>,
}

impl SagaTable {
    /// Table initialized at `x` (costs `N` sample gradients).
    pub fn new(problem: &Problem, x: &[f64]) -> Result<Self> {
        let design = problem.design();
        let loss = problem.loss();
        let mut table = vec![0.0; design.nrows()];
        for (r, t) in table.iter_mut().enumerate() {
            *t = loss.grad(design.row_dot(r, x), problem.target(r));
        }
        let mut s = SagaTable {
            table,
            mean: vec![0.0; problem.dim()],
        };
        s.mean = s.recomputed_mean(problem);
        if s.table.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { sample: 0 });
        }
        Ok(s)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// The table mean recomputed from scratch.
    pub fn recomputed_mean(&self, problem: &Problem) -> Vec<f64> {
        let design = problem.design();
        let scale = 1.0 / problem.n_samples() as f64;
        let mut mean = vec![0.0; problem.dim()];
        for (r, &t) in self.table.iter().enumerate() {
            design.row_axpy(r, scale * t, &mut mean);
        }
        mean
    }

    /// `g = (1/b) Σ_{j∈S} (∇f_j(x) - table_j) + mean`, followed by the
    /// table update at `x`.
    pub fn step_gradient(&mut self, problem: &Problem, x: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        let design = problem.design();
        let loss = problem.loss();
        let scale = 1.0 / batch.len() as f64;
        let mut g = self.mean.clone();
        let mut fresh = Vec::new();
        for &i in batch {
            for r in problem.block_rows(i) {
                let new = loss.grad(design.row_dot(r, x), problem.target(r));
                if !new.is_finite() {
                    return Err(Error::Evaluation { sample: i });
                }
                design.row_axpy(r, scale * (new - self.table[r]), &mut g);
                fresh.push((r, new));
            }
        }
        let inv_n = 1.0 / problem.n_samples() as f64;
        for (r, new) in fresh {
            let old = std::mem::replace(&mut self.table[r], new);
            if new != old {
                design.row_axpy(r, inv_n * (new - old), &mut self.mean);
            }
        }
        Ok(g)
    }
}

/// `steps` SAGA steps from `x` with a table initialized at `x`; returns the
/// iterate and the gradient evaluations spent.
pub fn saga_pass(
    problem: &Problem,
    x: &[f64],
    alpha: f64,
    batch: usize,
    steps: usize,
    sampler: &mut Sampler,
) -> Result<(Vec<f64>, u64)> {
    let n = problem.n_samples();
    let mut table = SagaTable::new(problem, x)?;
    let mut x = x.to_vec();
    for _ in 0..steps {
        let s = sampler.sample_batch(n, batch)?;
        let g = table.step_gradient(problem, &x, &s)?;
        prox_step(problem, &mut x, &g, alpha);
    }
    Ok((x, (n + steps * batch) as u64))
}

pub fn saga_run(problem: &Problem, cfg: &BaselineConfig, x0: &[f64], monitor: &mut dyn Monitor) -> Result<RunOutcome> {
    let n = problem.n_samples();
    let per_epoch = cfg.steps_per_epoch(n);
    let mut sampler = Sampler::new(cfg.seed, cfg.sampling);
    let mut rep = Reporter::new(monitor, cfg.max_epochs, n);
    let mut x = x0.to_vec();
    let mut evals = 0u64;
    if let Some(st) = rep.report(0, 0, evals, &x, 0, f64::NAN)? {
        return Ok(outcome(x, st, evals, 0, cfg, &rep));
    }
    let mut table = try_or_fail!(SagaTable::new(problem, &x), x, evals, 0, cfg, rep);
    evals += n as u64;
    for s in 0..cfg.outer_iters {
        for _ in 0..per_epoch {
            let batch = sampler.sample_batch(n, cfg.batch)?;
            let g = try_or_fail!(table.step_gradient(problem, &x, &batch), x, evals, s, cfg, rep);
            evals += cfg.batch as u64;
            prox_step(problem, &mut x, &g, cfg.alpha);
        }
        if let Some(st) = rep.report(s + 1, 0, evals, &x, 0, f64::NAN)? {
            return Ok(outcome(x, st, evals, s + 1, cfg, &rep));
        }
    }
    Ok(outcome(x, RunStatus::Completed, evals, cfg.outer_iters, cfg, &rep))
}

/// Diagonal AdaGrad state: accumulator `G` and damping `δ`.
#[derive(Clone, Debug)]
pub struct AdagradState {
    pub accumulator: Vec<f64>,
    pub delta: f64,
}

impl AdagradState {
    pub fn new(dim: usize, delta: f64) -> Self {
        AdagradState {
            accumulator: vec![0.0; dim],
            delta,
        }
    }

    /// `G += g⊙g`, then `x⁺ = prox` with per-coordinate steps
    /// `α/(sqrt(G_j) + δ)`.
    pub fn step(&mut self, problem: &Problem, x: &mut [f64], g: &[f64], alpha: f64) {
        let reg = problem.regularizer();
        for j in 0..x.len() {
            self.accumulator[j] += g[j] * g[j];
            let step = alpha / (self.accumulator[j].sqrt() + self.delta);
            x[j] = reg.prox_scalar(x[j] - step * g[j], step);
        }
    }
}

pub fn adagrad_run(
    problem: &Problem,
    cfg: &BaselineConfig,
    x0: &[f64],
    monitor: &mut dyn Monitor,
) -> Result<RunOutcome> {
    let n = problem.n_samples();
    let per_epoch = cfg.steps_per_epoch(n);
    let mut sampler = Sampler::new(cfg.seed, cfg.sampling);
    let mut rep = Reporter::new(monitor, cfg.max_epochs, n);
    let mut state = AdagradState::new(problem.dim(), cfg.adagrad_delta);
    let mut x = x0.to_vec();
    let mut evals = 0u64;
    if let Some(st) = rep.report(0, 0, evals, &x, 0, f64::NAN)? {
        return Ok(outcome(x, st, evals, 0, cfg, &rep));
    }
    for s in 0..cfg.outer_iters {
        for _ in 0..per_epoch {
            let batch = sampler.sample_batch(n, cfg.batch)?;
            let g = try_or_fail!(problem.batch_gradient(&x, &batch), x, evals, s, cfg, rep);
            evals += cfg.batch as u64;
            state.step(problem, &mut x, &g, cfg.alpha);
        }
        if let Some(st) = rep.report(s + 1, 0, evals, &x, 0, f64::NAN)? {
            return Ok(outcome(x, st, evals, s + 1, cfg, &rep));
        }
    }
    Ok(outcome(x, RunStatus::Completed, evals, cfg.outer_iters, cfg, &rep))
}

pub fn prox_gd_run(
    problem: &Problem,
    cfg: &BaselineConfig,
    x0: &[f64],
    monitor: &mut dyn Monitor,
) -> Result<RunOutcome> {
    let n = problem.n_samples();
    let mut rep = Reporter::new(monitor, cfg.max_epochs, n);
    let mut x = x0.to_vec();
    let mut evals = 0u64;
    if let Some(st) = rep.report(0, 0, evals, &x, 0, f64::NAN)? {
        return Ok(outcome(x, st, evals, 0, cfg, &rep));
    }
    for s in 0..cfg.outer_iters {
        let g = try_or_fail!(problem.full_gradient(&x), x, evals, s, cfg, rep);
        evals += n as u64;
        prox_step(problem, &mut x, &g, cfg.alpha);
        if let Some(st) = rep.report(s + 1, 0, evals, &x, 0, f64::NAN)? {
            return Ok(outcome(x, st, evals, s + 1, cfg, &rep));
        }
    }
    Ok(outcome(x, RunStatus::Completed, evals, cfg.outer_iters, cfg, &rep))
}

/// Reference solution from long proximal gradient runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimumEstimate {
    pub x: Vec<f64>,
    pub objective: f64,
    pub fnat_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub step: f64,
}

/// Iterates `x⁺ = prox_{αφ}(x - α∇f(x))` with `α = 1/L` (unless given)
/// until `||F_nat(x)|| ≤ tol` or `max_iter` iterations.
pub fn estimate_optimum(
    problem: &Problem,
    x0: &[f64],
    step: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<OptimumEstimate> {
    problem.check_point(x0)?;
    let alpha = step.unwrap_or(1.0 / problem.constants().l_smooth);
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("invalid step {alpha}")));
    }
    let mut x = x0.to_vec();
    let mut iterations = 0;
    let mut g = problem.full_gradient(&x)?;
    let mut fnat = fnat_from_gradient(problem, &x, &g, 1.0);
    while fnat > tol && iterations < max_iter {
        prox_step(problem, &mut x, &g, alpha);
        g = problem.full_gradient(&x)?;
        fnat = fnat_from_gradient(problem, &x, &g, 1.0);
        iterations += 1;
    }
    Ok(OptimumEstimate {
        objective: problem.objective(&x)?,
        x,
        fnat_norm: fnat,
        iterations,
        converged: fnat <= tol,
        step: alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseRows, Design};
    use crate::losses::LossFamily;
    use crate::monitor::Silent;
    use crate::regularizers::Regularizer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(rows: &[Vec<f64>]) -> Design {
        Design::Dense(DenseRows::from_rows(rows).unwrap())
    }

    fn quad1() -> Problem {
        Problem::from_rows(dense(&[vec![1.0]]), vec![0.0], LossFamily::Squared, Regularizer::Zero).unwrap()
    }

    fn small_ls(reg: Regularizer) -> Problem {
        let rows = vec![
            vec![1.0, 0.2],
            vec![0.1, 1.0],
            vec![1.0, 1.0],
            vec![-0.5, 0.3],
            vec![0.4, -0.8],
        ];
        Problem::from_rows(dense(&rows), vec![1.0, -1.0, 0.3, 0.2, 0.9], LossFamily::Squared, reg).unwrap()
    }

    fn least_squares_solution(p: &Problem) -> Vec<f64> {
        let a = p.design().to_dense();
        let b = nalgebra::DVector::from_iterator(p.n_samples(), (0..p.n_samples()).map(|r| p.target(r)));
        let ata = a.transpose() * &a;
        let atb = a.transpose() * b;
        ata.cholesky().unwrap().solve(&atb).as_slice().to_vec()
    }

    #[test]
    fn full_batch_svrg_is_prox_gradient() {
        let p = quad1();
        let cfg = BaselineConfig {
            batch: 1,
            inner_len: Some(1),
            outer_iters: 1,
            ..Default::default()
        };
        let out = svrg_run(&p, &cfg, &[1.0], &mut Silent).unwrap();
        assert_eq!(out.x, vec![0.0]);
    }

    #[test]
    fn single_sample_saga_is_prox_gradient() {
        let p = Problem::from_rows(
            dense(&[vec![2.0]]),
            vec![1.0],
            LossFamily::Squared,
            Regularizer::l1(0.1),
        )
        .unwrap();
        let mut table = SagaTable::new(&p, &[0.3]).unwrap();
        let mut x = vec![0.3];
        for _ in 0..5 {
            let g = table.step_gradient(&p, &x, &[0]).unwrap();
            let exact = p.full_gradient(&x).unwrap();
            assert!((g[0] - exact[0]).abs() < 1e-15);
            prox_step(&p, &mut x, &g, 0.1);
        }
    }

    #[test]
    fn saga_running_mean_matches_recomputation() {
        let p = small_ls(Regularizer::Zero);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut table = SagaTable::new(&p, &[0.0, 0.0]).unwrap();
        for _ in 0..1000 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let batch = [rng.random_range(0..5), rng.random_range(0..5)];
            table.step_gradient(&p, &x, &batch).unwrap();
        }
        let fresh = table.recomputed_mean(&p);
        for (a, b) in table.mean().iter().zip(&fresh) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn saga_gradient_is_unbiased() {
        let rows = vec![vec![1.0, 0.5], vec![-0.3, 1.0], vec![0.7, -0.2]];
        let p = Problem::logistic(dense(&rows), &[1.0, -1.0, 1.0], Regularizer::Zero).unwrap();
        let base = SagaTable::new(&p, &[0.4, -0.1]).unwrap();
        let x = [1.0, 2.0];
        let mut mean = [0.0; 2];
        for i in 0..3 {
            let mut t = base.clone();
            let g = t.step_gradient(&p, &x, &[i]).unwrap();
            mean[0] += g[0] / 3.0;
            mean[1] += g[1] / 3.0;
        }
        let exact = p.full_gradient(&x).unwrap();
        assert!((mean[0] - exact[0]).abs() < 1e-14 && (mean[1] - exact[1]).abs() < 1e-14);
    }

    #[test]
    fn adagrad_first_step_and_monotone_accumulator() {
        let p = Problem::from_rows(
            dense(&[vec![1.0, 1.0]]),
            vec![0.0],
            LossFamily::Squared,
            Regularizer::Zero,
        )
        .unwrap();
        let mut st = AdagradState::new(2, 1e-8);
        let mut x = vec![0.0, 0.0];
        st.step(&p, &mut x, &[1.0, 1.0], 0.5);
        // Effective step α / (1 + δ).
        assert!((x[0] + 0.5).abs() < 1e-8 && (x[1] + 0.5).abs() < 1e-8);
        let before = x.clone();
        st.step(&p, &mut x, &[0.0, 0.0], 0.5);
        assert_eq!(x, before);
        let g0 = st.accumulator.clone();
        st.step(&p, &mut x, &[0.3, -2.0], 0.5);
        assert!(st.accumulator.iter().zip(&g0).all(|(a, b)| a >= b));
    }

    #[test]
    fn prox_gd_lasso_matches_coordinate_descent() {
        let p = small_ls(Regularizer::l1(0.05));
        // Coordinate descent oracle on (1/2N)||Ax - b||² + λ||x||_1.
        let a = p.design().to_dense();
        let n = p.n_samples() as f64;
        let mut x = [0.0f64; 2];
        for _ in 0..10_000 {
            for j in 0..2 {
                let mut rho = 0.0;
                let mut zj = 0.0;
                for r in 0..5 {
                    let pred = a[(r, 0)] * x[0] + a[(r, 1)] * x[1] - a[(r, j)] * x[j];
                    rho += a[(r, j)] * (p.target(r) - pred) / n;
                    zj += a[(r, j)] * a[(r, j)] / n;
                }
                x[j] = crate::regularizers::soft_threshold(rho, 0.05) / zj;
            }
        }
        let est = estimate_optimum(&p, &[0.0, 0.0], None, 1e-13, 100_000).unwrap();
        assert!(est.converged);
        assert!((est.x[0] - x[0]).abs() < 1e-8 && (est.x[1] - x[1]).abs() < 1e-8);
    }

    #[test]
    fn prox_gd_objective_is_monotone() {
        let p = small_ls(Regularizer::l1(0.05));
        let alpha = 1.0 / p.constants().l_smooth;
        let cfg = BaselineConfig {
            alpha,
            outer_iters: 50,
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        let mut mon = |cp: &crate::monitor::Checkpoint<'_>| {
            let v = p.objective(cp.x).unwrap();
            assert!(v <= last + 1e-15);
            last = v;
            Ok(crate::monitor::Control::Continue)
        };
        prox_gd_run(&p, &cfg, &[3.0, -3.0], &mut mon).unwrap();
    }

    #[test]
    fn all_methods_reach_least_squares_solution() {
        let p = small_ls(Regularizer::Zero);
        let sol = least_squares_solution(&p);
        let l = p.constants().l_bar;
        let cases = [
            (BaselineMethod::ProxGd, 1.0 / p.constants().l_smooth, 1, 2000),
            (BaselineMethod::Svrg, 0.2 / l, 1, 400),
            (BaselineMethod::Saga, 0.2 / l, 1, 600),
            (BaselineMethod::Adagrad, 0.5, 5, 20_000),
        ];
        for (method, alpha, batch, outer_iters) in cases {
            let cfg = BaselineConfig {
                alpha,
                batch,
                outer_iters,
                sampling: Sampling::WithoutReplacement,
                seed: 1,
                ..Default::default()
            };
            let out = run_baseline(method, &p, &cfg, &[0.0, 0.0], &mut Silent).unwrap();
            let err = crate::linalg::dist(&out.x, &sol);
            assert!(err < 1e-6, "{} error {err}", method.name());
        }
    }

    #[test]
    fn divergence_is_flagged() {
        let p = quad1();
        let cfg = BaselineConfig {
            alpha: 5.0,
            outer_iters: 100,
            ..Default::default()
        };
        let out = prox_gd_run(&p, &cfg, &[1.0], &mut Silent).unwrap();
        assert_eq!(out.status, RunStatus::Diverged);
    }
}
