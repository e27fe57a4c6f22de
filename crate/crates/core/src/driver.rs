//! The SNSPP outer/inner loop: snapshot full gradients, sampled batches,
//! and one stochastic proximal point step per inner iteration solved by
//! [`crate::subsolver`].

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::Problem;
use crate::monitor::{Monitor, Reporter, RunOutcome, RunStatus};
use crate::subsolver::{solve_subproblem, NewtonParams, SubproblemContext, SubproblemSolution};

/// Smallest subproblem tolerance the driver requests; adaptive schedules
/// shrink below what floating point can resolve.
pub const MIN_TOLERANCE: f64 = 1e-12;

/// Per-outer-iteration schedule; the last entry repeats once exhausted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule<T> {
    Constant(T),
    PerOuter(Vec<T>),
}

impl<T: Copy> Schedule<T> {
    pub fn at(&self, s: usize) -> T {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::PerOuter(v) => v[s.min(v.len() - 1)],
        }
    }

    fn values(&self) -> Vec<T> {
        match self {
            Schedule::Constant(v) => vec![*v],
            Schedule::PerOuter(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    WithReplacement,
    WithoutReplacement,
}

/// How the next snapshot is formed from the inner iterates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotRule {
    /// Option I: the last inner iterate.
    #[default]
    Last,
    /// Option II: the mean of `x^1, ..., x^m`.
    Average,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ToleranceSchedule {
    /// `ε_sub` from the Newton parameters.
    #[default]
    Constant,
    /// `δ₀ c^s ||F_nat(x̃^s)||`.
    Adaptive { delta0: f64, c: f64 },
}

impl ToleranceSchedule {
    pub fn adaptive_default() -> Self {
        ToleranceSchedule::Adaptive { delta0: 0.1, c: 0.5 }
    }
}

/// Optional cheap start before the first snapshot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warmup {
    #[default]
    None,
    /// One SAGA epoch with the first step size.
    SagaEpoch,
    /// One inner loop of proximal point steps without variance reduction.
    VrFreeStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnsppConfig {
    pub alpha: Schedule<f64>,
    pub batch: Schedule<usize>,
    /// Inner loop length `m`.
    pub inner_len: usize,
    /// Outer loop count `S`.
    pub outer_iters: usize,
    /// Budget in epochs of single-sample gradient evaluations.
    pub max_epochs: Option<f64>,
    pub tolerance: ToleranceSchedule,
    pub snapshot: SnapshotRule,
    pub sampling: Sampling,
    pub newton: NewtonParams,
    /// Reuse the last dual block of a sample when it is drawn again.
    pub warm_start: bool,
    pub warmup: Warmup,
    /// Report every inner iterate, not only snapshots.
    pub record_inner: bool,
    /// Draw `x_π` uniformly from all inner iterates.
    pub track_uniform_iterate: bool,
    pub seed: u64,
}

impl Default for SnsppConfig {
    fn default() -> Self {
        SnsppConfig {
            alpha: Schedule::Constant(1.0),
            batch: Schedule::Constant(1),
            inner_len: 10,
            outer_iters: 50,
            max_epochs: None,
            tolerance: ToleranceSchedule::Constant,
            snapshot: SnapshotRule::Last,
            sampling: Sampling::WithReplacement,
            newton: NewtonParams::default(),
            warm_start: true,
            warmup: Warmup::None,
            record_inner: false,
            track_uniform_iterate: false,
            seed: 0,
        }
    }
}

impl SnsppConfig {
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let mut problems = Vec::new();
        let alphas = self.alpha.values();
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            problems.push("step sizes must be positive and finite".to_string());
        }
        let batches = self.batch.values();
        if batches.is_empty() || batches.contains(&0) {
            problems.push("batch sizes must be at least 1".to_string());
        }
        if self.sampling == Sampling::WithoutReplacement && batches.iter().any(|&b| b > n_samples) {
            problems.push(format!("batch size exceeds N = {n_samples} without replacement"));
        }
        if self.inner_len == 0 {
            problems.push("inner loop length must be at least 1".to_string());
        }
        if let ToleranceSchedule::Adaptive { delta0, c } = self.tolerance {
            if !(delta0 >= 0.0 && c > 0.0 && c <= 1.0) {
                problems.push(format!(
                    "adaptive tolerance needs delta0 >= 0, c in (0, 1], got {delta0}, {c}"
                ));
            }
        }
        if let Err(e) = self.newton.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Seeded batch sampler.
#[derive(Clone, Debug)]
pub struct Sampler {
    rng: ChaCha8Rng,
    mode: Sampling,
}

impl Sampler {
    pub fn new(seed: u64, mode: Sampling) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode,
        }
    }

    /// A `b`-tuple with uniform marginals over `0..n`.
    pub fn sample_batch(&mut self, n: usize, b: usize) -> Result<Vec<usize>> {
        if n == 0 || b == 0 {
            return Err(Error::invalid("cannot sample an empty batch"));
        }
        match self.mode {
            Sampling::WithReplacement => Ok((0..b).map(|_| self.rng.random_range(0..n)).collect()),
            Sampling::WithoutReplacement => {
                if b > n {
                    return Err(Error::invalid(format!(
                        "batch size {b} exceeds N = {n} without replacement"
                    )));
                }
                Ok(index::sample(&mut self.rng, n, b).into_vec())
            }
        }
    }
}

/// Snapshot data: `x̃` and `∇f(x̃)`.
#[derive(Clone, Debug)]
pub struct Anchor {
    pub x: Vec<f64>,
    pub grad: Vec<f64>,
}

pub fn anchor_update(problem: &Problem, x: &[f64]) -> Result<Anchor> {
    Ok(Anchor {
        x: x.to_vec(),
        grad: problem.full_gradient(x)?,
    })
}

/// `v = ∇f(x̃) - ∇f_S(x̃)`.
pub fn correction(problem: &Problem, anchor: &Anchor, batch: &[usize]) -> Result<Vec<f64>> {
    let gs = problem.batch_gradient(&anchor.x, batch)?;
    Ok(anchor.grad.iter().zip(&gs).map(|(a, b)| a - b).collect())
}

/// Variance-reduced gradient `∇f_S(x) - ∇f_S(x̃) + ∇f(x̃)`.
pub fn vr_gradient(problem: &Problem, anchor: &Anchor, batch: &[usize], x: &[f64]) -> Result<Vec<f64>> {
    let gx = problem.batch_gradient(x, batch)?;
    let v = correction(problem, anchor, batch)?;
    Ok(gx.iter().zip(&v).map(|(a, b)| a + b).collect())
}

/// `v̂ = α(v - M_S x)` with `M_S = (1/b) Σ γ_i A_iᵀ A_i`.
pub fn shift_vector(problem: &Problem, batch: &[usize], x: &[f64], v: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let mx = problem.weak_metric_apply(batch, x)?;
    Ok(v.iter().zip(&mx).map(|(a, b)| alpha * (a - b)).collect())
}

/// `ε_s` for the subproblems of outer iteration `s`.
pub fn tolerance_schedule(mode: &ToleranceSchedule, s: usize, fnat_norm: f64, eps_sub: f64) -> f64 {
    match *mode {
        ToleranceSchedule::Constant => eps_sub,
        ToleranceSchedule::Adaptive { delta0, c } => delta0 * c.powi(s as i32) * fnat_norm,
    }
}

/// One stochastic proximal point step from `x` with correction `v`.
pub fn snspp_step(
    problem: &Problem,
    x: &[f64],
    v: &[f64],
    alpha: f64,
    batch: &[usize],
    params: &NewtonParams,
    xi0: Option<Vec<f64>>,
) -> Result<SubproblemSolution> {
    let v_hat = shift_vector(problem, batch, x, v, alpha)?;
    let shift: Vec<f64> = v_hat.iter().map(|a| -a).collect();
    let ctx = SubproblemContext::new(problem, x, &shift, alpha, batch)?;
    let xi0 = xi0.unwrap_or_else(|| ctx.cold_start());
    solve_subproblem(&ctx, params, xi0)
}

/// Last dual block per sample.
struct DualCache {
    blocks: Vec<Option<Vec<f64>>>,
    start: f64,
}

impl DualCache {
    fn new(problem: &Problem) -> Self {
        DualCache {
            blocks: vec![None; problem.n_samples()],
            start: problem.loss().conj_start(),
        }
    }

    fn initial(&self, problem: &Problem, batch: &[usize]) -> Vec<f64> {
        let mut xi = Vec::new();
        for &i in batch {
            match &self.blocks[i] {
                Some(block) => xi.extend_from_slice(block),
                None => xi.extend(std::iter::repeat_n(self.start, problem.block_rows(i).len())),
            }
        }
        xi
    }

    fn store(&mut self, problem: &Problem, batch: &[usize], xi: &[f64]) {
        let mut offset = 0;
        for &i in batch {
            let len = problem.block_rows(i).len();
            self.blocks[i] = Some(xi[offset..offset + len].to_vec());
            offset += len;
        }
    }
}

/// Runs SNSPP from `x0`.
pub fn snspp_run(problem: &Problem, cfg: &SnsppConfig, x0: &[f64], monitor: &mut dyn Monitor) -> Result<RunOutcome> {
    problem.check_point(x0)?;
    cfg.validate(problem.n_samples())?;
    let n = problem.n_samples();
    let m = cfg.inner_len;
    let mut sampler = Sampler::new(cfg.seed, cfg.sampling);
    // Separate stream so that tracking x_π leaves the batches unchanged.
    let mut pick_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0f0_u64);
    let mut cache = DualCache::new(problem);
    let mut reporter = Reporter::new(monitor, cfg.max_epochs, n);

    let mut x = x0.to_vec();
    let mut grad_evals: u64 = 0;
    let mut alpha_scale = 1.0;
    let mut retries = 0;
    let mut newton_total = 0;
    let mut uniform: Option<Vec<f64>> = None;
    let mut seen_iterates: u64 = 0;

    let finish = |x: Vec<f64>,
                  status: RunStatus,
                  grad_evals: u64,
                  outer: usize,
                  newton: usize,
                  retries: usize,
                  alpha: f64,
                  uniform: Option<Vec<f64>>,
                  reporter: &Reporter<'_>| RunOutcome {
        x,
        x_uniform: uniform,
        status,
        grad_evals,
        wall_time_s: reporter.elapsed_s(),
        outer_iters: outer,
        newton_iters: newton,
        retries,
        final_alpha: alpha,
    };

    match cfg.warmup {
        Warmup::None => {}
        Warmup::SagaEpoch => {
            let alpha = cfg.alpha.at(0);
            let (next, evals) = baselines::saga_pass(problem, &x, alpha, 1, n, &mut sampler)?;
            x = next;
            grad_evals += evals;
        }
        Warmup::VrFreeStep => {
            let alpha = cfg.alpha.at(0);
            let b = cfg.batch.at(0);
            let zero = vec![0.0; problem.dim()];
            for _ in 0..m {
                let batch = sampler.sample_batch(n, b)?;
                let xi0 = cfg.warm_start.then(|| cache.initial(problem, &batch));
                let sol = snspp_step(problem, &x, &zero, alpha, &batch, &cfg.newton, xi0)?;
                cache.store(problem, &batch, &sol.xi);
                newton_total += sol.stats.iterations;
                x = sol.x_plus;
                grad_evals += b as u64;
            }
        }
    }

    if let Some(status) = reporter.report(0, 0, grad_evals, &x, newton_total, f64::NAN)? {
        let a = cfg.alpha.at(0);
        return Ok(finish(x, status, grad_evals, 0, newton_total, 0, a, None, &reporter));
    }

    for s in 0..cfg.outer_iters {
        let alpha_s = cfg.alpha.at(s);
        let b = cfg.batch.at(s);
        let anchor = anchor_update(problem, &x)?;
        grad_evals += n as u64;
        let eps = match cfg.tolerance {
            ToleranceSchedule::Constant => cfg.newton.eps_sub,
            mode => {
                let fnat = fnat_from_gradient(problem, &x, &anchor.grad, 1.0);
                tolerance_schedule(&mode, s, fnat, cfg.newton.eps_sub)
            }
        };
        let params = NewtonParams {
            eps_sub: eps.max(MIN_TOLERANCE.min(cfg.newton.eps_sub)),
            ..cfg.newton
        };
        let mut inner_x = x.clone();
        let mut sum = vec![0.0; x.len()];
        let mut newton_outer = 0;
        let mut last_residual = f64::NAN;

        for k in 0..m {
            let batch = sampler.sample_batch(n, b)?;
            let v = correction(problem, &anchor, &batch)?;
            grad_evals += b as u64;
            let xi0 = cfg.warm_start.then(|| cache.initial(problem, &batch));
            let mut step = snspp_step(problem, &inner_x, &v, alpha_s * alpha_scale, &batch, &params, xi0);
            if step.is_err() && retries == 0 {
                retries += 1;
                alpha_scale *= 0.5;
                step = snspp_step(problem, &inner_x, &v, alpha_s * alpha_scale, &batch, &params, None);
            }
            let sol = match step {
                Ok(sol) => sol,
                Err(e) => {
                    let status = RunStatus::Failed(format!("outer {s}, inner {k}: {e}"));
                    let a = alpha_s * alpha_scale;
                    return Ok(finish(
                        x,
                        status,
                        grad_evals,
                        s,
                        newton_total,
                        retries,
                        a,
                        uniform,
                        &reporter,
                    ));
                }
            };
            if cfg.warm_start {
                cache.store(problem, &batch, &sol.xi);
            }
            newton_outer += sol.stats.iterations;
            newton_total += sol.stats.iterations;
            last_residual = sol.stats.residual;
            inner_x = sol.x_plus;
            sum.iter_mut().zip(&inner_x).for_each(|(a, b)| *a += b);

            if cfg.track_uniform_iterate {
                seen_iterates += 1;
                if pick_rng.random_range(0..seen_iterates) == 0 {
                    uniform = Some(inner_x.clone());
                }
            }
            if cfg.record_inner && k + 1 < m {
                if let Some(status) =
                    reporter.report(s, k + 1, grad_evals, &inner_x, sol.stats.iterations, last_residual)?
                {
                    let a = alpha_s * alpha_scale;
                    return Ok(finish(
                        inner_x,
                        status,
                        grad_evals,
                        s,
                        newton_total,
                        retries,
                        a,
                        uniform,
                        &reporter,
                    ));
                }
            } else if norm(&inner_x) > crate::monitor::DIVERGENCE_NORM {
                let a = alpha_s * alpha_scale;
                return Ok(finish(
                    inner_x,
                    RunStatus::Diverged,
                    grad_evals,
                    s,
                    newton_total,
                    retries,
                    a,
                    uniform,
                    &reporter,
                ));
            }
        }

        x = match cfg.snapshot {
            SnapshotRule::Last => inner_x,
            SnapshotRule::Average => sum.into_iter().map(|v| v / m as f64).collect(),
        };
        if let Some(status) = reporter.report(s + 1, 0, grad_evals, &x, newton_outer, last_residual)? {
            let a = alpha_s * alpha_scale;
            return Ok(finish(
                x,
                status,
                grad_evals,
                s + 1,
                newton_total,
                retries,
                a,
                uniform,
                &reporter,
            ));
        }
    }
    let a = cfg.alpha.at(cfg.outer_iters.saturating_sub(1)) * alpha_scale;
    Ok(finish(
        x,
        RunStatus::Completed,
        grad_evals,
        cfg.outer_iters,
        newton_total,
        retries,
        a,
        uniform,
        &reporter,
    ))
}

/// `x - prox_{αφ}(x - α g)` for a precomputed gradient `g`.
pub(crate) fn fnat_from_gradient(problem: &Problem, x: &[f64], g: &[f64], alpha: f64) -> f64 {
    let reg = problem.regularizer();
    x.iter()
        .zip(g)
        .map(|(xi, gi)| {
            let r = xi - reg.prox_scalar(xi - alpha * gi, alpha);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseRows, Design};
    use crate::losses::LossFamily;
    use crate::monitor::Silent;
    use crate::regularizers::Regularizer;

    fn scalar_quadratic() -> Problem {
        let d = Design::Dense(DenseRows::from_rows(&[vec![1.0]]).unwrap());
        Problem::from_rows(d, vec![0.0], LossFamily::Squared, Regularizer::Zero).unwrap()
    }

    #[test]
    fn implicit_step_halves_scalar_quadratic() {
        let p = scalar_quadratic();
        let cfg = SnsppConfig {
            alpha: Schedule::Constant(1.0),
            inner_len: 1,
            outer_iters: 1,
            newton: NewtonParams {
                eps_sub: 0.0,
                max_iter: 20,
                ..NewtonParams::default()
            },
            ..SnsppConfig::default()
        };
        let sol = snspp_step(&p, &[3.0], &[0.0], 1.0, &[0], &cfg.newton, None).unwrap();
        assert!((sol.x_plus[0] - 1.5).abs() < 1e-13);
        let out = snspp_run(&p, &cfg, &[3.0], &mut Silent).unwrap();
        assert_eq!(out.status, RunStatus::Completed);
        assert!((out.x[0] - 1.5).abs() < 1e-13);
        assert_eq!(out.grad_evals, 2);
    }

    #[test]
    fn without_replacement_full_batch_is_permutation() {
        let mut s = Sampler::new(3, Sampling::WithoutReplacement);
        let mut b = s.sample_batch(7, 7).unwrap();
        b.sort_unstable();
        assert_eq!(b, (0..7).collect::<Vec<_>>());
        assert!(s.sample_batch(3, 4).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let mut a = Sampler::new(42, Sampling::WithReplacement);
        let mut b = Sampler::new(42, Sampling::WithReplacement);
        for _ in 0..20 {
            assert_eq!(a.sample_batch(10, 3).unwrap(), b.sample_batch(10, 3).unwrap());
        }
    }

    #[test]
    fn sampler_marginals_are_uniform() {
        let z = [1.0, 4.0, -2.0];
        let mean = z.iter().sum::<f64>() / 3.0;
        let mut s = Sampler::new(7, Sampling::WithReplacement);
        let draws = 100_000;
        let vals: Vec<f64> = (0..draws)
            .map(|_| {
                let b = s.sample_batch(3, 2).unwrap();
                b.iter().map(|&i| z[i]).sum::<f64>() / 2.0
            })
            .collect();
        let est = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - est).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!((est - mean).abs() <= 3.0 * (var / draws as f64).sqrt());
    }

    #[test]
    fn full_batch_correction_vanishes() {
        let d = Design::Dense(DenseRows::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap());
        let p = Problem::logistic(d, &[1.0, -1.0, 1.0], Regularizer::Zero).unwrap();
        let anchor = anchor_update(&p, &[0.2, -0.4]).unwrap();
        assert_eq!(anchor.grad, p.full_gradient(&[0.2, -0.4]).unwrap());
        assert!(correction(&p, &anchor, &[0, 1, 2]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn correction_is_unbiased_over_all_batches() {
        let d = Design::Dense(DenseRows::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap());
        let p = Problem::logistic(d, &[1.0, -1.0, 1.0], Regularizer::Zero).unwrap();
        let anchor = anchor_update(&p, &[0.2, -0.4]).unwrap();
        let x = [1.0, 0.5];
        let mut mean = [0.0; 2];
        for i in 0..3 {
            for j in 0..3 {
                let u = vr_gradient(&p, &anchor, &[i, j], &x).unwrap();
                mean[0] += u[0] / 9.0;
                mean[1] += u[1] / 9.0;
            }
        }
        let g = p.full_gradient(&x).unwrap();
        assert!((mean[0] - g[0]).abs() < 1e-14 && (mean[1] - g[1]).abs() < 1e-14);
    }

    #[test]
    fn shift_vector_hand_example() {
        let d = Design::Dense(DenseRows::from_rows(&[vec![2.0]]).unwrap());
        let p = Problem::new(
            d,
            vec![0, 1],
            vec![0.0],
            LossFamily::StudentT { nu: 1.0 },
            vec![1.0],
            Regularizer::Zero,
        )
        .unwrap();
        assert_eq!(shift_vector(&p, &[0], &[1.0], &[0.0], 1.0).unwrap(), vec![-4.0]);
        let q = scalar_quadratic();
        assert_eq!(shift_vector(&q, &[0], &[1.0], &[0.0], 1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn tolerance_schedule_arithmetic() {
        assert_eq!(tolerance_schedule(&ToleranceSchedule::Constant, 5, 2.0, 1e-3), 1e-3);
        let ad = ToleranceSchedule::adaptive_default();
        assert!((tolerance_schedule(&ad, 3, 2.0, 1e-3) - 0.025).abs() < 1e-15);
        assert_eq!(tolerance_schedule(&ad, 3, 0.0, 1e-3), 0.0);
    }

    #[test]
    fn schedules_repeat_last_entry() {
        let s = Schedule::PerOuter(vec![1.0, 0.5]);
        assert_eq!((s.at(0), s.at(1), s.at(7)), (1.0, 0.5, 0.5));
        assert_eq!(Schedule::Constant(3usize).at(9), 3);
    }

    #[test]
    fn config_validation_collects_problems() {
        let cfg = SnsppConfig {
            alpha: Schedule::Constant(-1.0),
            batch: Schedule::Constant(0),
            inner_len: 0,
            ..SnsppConfig::default()
        };
        let msg = cfg.validate(10).unwrap_err().to_string();
        assert!(msg.contains("step") && msg.contains("batch") && msg.contains("inner"));
    }

    #[test]
    fn runs_are_deterministic() {
        let d = Design::Dense(
            DenseRows::from_rows(
                &(0..12)
                    .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), 1.0])
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
        );
        let labels: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let p = Problem::logistic(d, &labels, Regularizer::l1(0.01)).unwrap();
        let cfg = SnsppConfig {
            alpha: Schedule::Constant(2.0),
            batch: Schedule::Constant(3),
            outer_iters: 5,
            track_uniform_iterate: true,
            seed: 11,
            ..SnsppConfig::default()
        };
        let a = snspp_run(&p, &cfg, &[0.0; 3], &mut Silent).unwrap();
        let b = snspp_run(&p, &cfg, &[0.0; 3], &mut Silent).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.x_uniform, b.x_uniform);
        assert_eq!(a.grad_evals, 5 * (12 + 10 * 3));
        let psi0 = p.objective(&[0.0; 3]).unwrap();
        assert!(p.objective(&a.x).unwrap() < psi0);
    }

    #[test]
    fn warmup_modes_run() {
        let d = Design::Dense(DenseRows::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap());
        let p = Problem::from_rows(d, vec![1.0, -1.0, 0.5], LossFamily::Squared, Regularizer::l1(0.1)).unwrap();
        for warmup in [Warmup::SagaEpoch, Warmup::VrFreeStep] {
            let cfg = SnsppConfig {
                alpha: Schedule::Constant(0.5),
                outer_iters: 3,
                warmup,
                ..SnsppConfig::default()
            };
            let out = snspp_run(&p, &cfg, &[0.0, 0.0], &mut Silent).unwrap();
            assert_eq!(out.status, RunStatus::Completed);
        }
    }
}
