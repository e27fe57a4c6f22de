//! Stationarity measures, trace records and sinks, run summaries and the
//! empirical check of the subproblem inexactness bounds.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, norm};
use crate::model::Problem;
use crate::monitor::{Checkpoint, Control, Monitor, RunOutcome, RunStatus};
use crate::subsolver::{solve_subproblem, NewtonParams, SubproblemContext};

/// Tolerance of the reference solve in [`verify_inexactness`].
pub const REFERENCE_TOL: f64 = 1e-12;

/// Natural residual `F_nat^α(x) = x - prox_{αφ}(x - α∇f(x))`.
pub fn fnat(problem: &Problem, x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("fnat step must be positive, got {alpha}")));
    }
    let g = problem.full_gradient(x)?;
    let reg = problem.regularizer();
    Ok(x.iter()
        .zip(&g)
        .map(|(xi, gi)| xi - reg.prox_scalar(xi - alpha * gi, alpha))
        .collect())
}

pub fn fnat_norm(problem: &Problem, x: &[f64]) -> Result<f64> {
    Ok(norm(&fnat(problem, x, 1.0)?))
}

/// One row of a trace file; the field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run_id: String,
    pub method: String,
    pub s: usize,
    pub k: usize,
    pub grad_evals: u64,
    pub wall_time_s: f64,
    pub objective: f64,
    pub fnat_norm: f64,
    pub inner_newton_iters: usize,
    pub inner_residual: f64,
    pub test_loss: Option<f64>,
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "run_id",
    "method",
    "s",
    "k",
    "grad_evals",
    "wall_time_s",
    "objective",
    "fnat_norm",
    "inner_newton_iters",
    "inner_residual",
    "test_loss",
];

/// Append-only CSV sink. Each record is written and flushed as one whole
/// line under a lock, so concurrent runs may share a sink.
#[derive(Debug)]
pub struct TraceSink {
    out: Mutex<BufWriter<File>>,
}

impl TraceSink {
    /// Creates (truncates) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", TRACE_COLUMNS.join(","))?;
        out.flush()?;
        Ok(TraceSink { out: Mutex::new(out) })
    }

    pub fn emit(&self, record: &TraceRecord) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(record)?;
        let line = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        out.write_all(&line)?;
        out.flush()?;
        Ok(())
    }

    pub fn flush(&self) -> Result<()> {
        self.out.lock().unwrap_or_else(|p| p.into_inner()).flush()?;
        Ok(())
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(TRACE_COLUMNS) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected trace header {headers:?}"),
        });
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Monitor that evaluates metrics at every checkpoint, keeps the records,
/// optionally streams them to a sink, and stops once the objective reaches
/// a target value.
pub struct Recorder<'a> {
    problem: &'a Problem,
    test: Option<&'a Problem>,
    sink: Option<&'a TraceSink>,
    run_id: String,
    method: String,
    target: Option<f64>,
    hit: Option<Threshold>,
    pub records: Vec<TraceRecord>,
}

/// First checkpoint at which the target objective was reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub wall_time_s: f64,
    pub epochs: f64,
}

impl<'a> Recorder<'a> {
    pub fn new(problem: &'a Problem, run_id: impl Into<String>, method: impl Into<String>) -> Self {
        Recorder {
            problem,
            test: None,
            sink: None,
            run_id: run_id.into(),
            method: method.into(),
            target: None,
            hit: None,
            records: Vec::new(),
        }
    }

    pub fn with_test(mut self, test: &'a Problem) -> Self {
        self.test = Some(test);
        self
    }

    pub fn with_sink(mut self, sink: &'a TraceSink) -> Self {
        self.sink = Some(sink);
        self
    }

    /// Stop once `ψ(x) ≤ target`.
    pub fn with_target(mut self, target: f64) -> Self {
        self.target = Some(target);
        self
    }

    pub fn threshold(&self) -> Option<Threshold> {
        self.hit
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

impl Monitor for Recorder<'_> {
    fn observe(&mut self, cp: &Checkpoint<'_>) -> Result<Control> {
        let objective = self.problem.objective(cp.x).unwrap_or(f64::NAN);
        let fnat_norm = fnat_norm(self.problem, cp.x).unwrap_or(f64::NAN);
        let test_loss = self.test.map(|t| t.smooth_value(cp.x).unwrap_or(f64::NAN));
        let record = TraceRecord {
            run_id: self.run_id.clone(),
            method: self.method.clone(),
            s: cp.s,
            k: cp.k,
            grad_evals: cp.grad_evals,
            wall_time_s: cp.wall_time_s,
            objective,
            fnat_norm,
            inner_newton_iters: cp.newton_iters,
            inner_residual: cp.newton_residual,
            test_loss,
        };
        if let Some(sink) = self.sink {
            sink.emit(&record)?;
        }
        self.records.push(record);
        if let Some(target) = self.target {
            if objective <= target {
                self.hit.get_or_insert(Threshold {
                    wall_time_s: cp.wall_time_s,
                    epochs: cp.grad_evals as f64 / self.problem.n_samples() as f64,
                });
                return Ok(Control::Stop);
            }
        }
        Ok(Control::Continue)
    }
}

/// Per-run JSON summary. Wall-clock quantities are left out so reruns
/// produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub status: RunStatus,
    pub final_objective: f64,
    pub final_fnat_norm: f64,
    pub grad_evals: u64,
    pub epochs: f64,
    pub outer_iters: usize,
    pub newton_iters: usize,
    pub retries: usize,
    pub final_alpha: f64,
    /// Epochs until the stop target was reached, if it was.
    pub epochs_to_threshold: Option<f64>,
    pub config: serde_json::Value,
}

impl RunSummary {
    pub fn from_outcome(
        problem: &Problem,
        outcome: &RunOutcome,
        run_id: &str,
        method: &str,
        seed: u64,
        threshold: Option<Threshold>,
        config: serde_json::Value,
    ) -> Self {
        RunSummary {
            run_id: run_id.to_string(),
            method: method.to_string(),
            seed,
            status: outcome.status.clone(),
            final_objective: problem.objective(&outcome.x).unwrap_or(f64::NAN),
            final_fnat_norm: fnat_norm(problem, &outcome.x).unwrap_or(f64::NAN),
            grad_evals: outcome.grad_evals,
            epochs: outcome.grad_evals as f64 / problem.n_samples() as f64,
            outer_iters: outcome.outer_iters,
            newton_iters: outcome.newton_iters,
            retries: outcome.retries,
            final_alpha: outcome.final_alpha,
            epochs_to_threshold: threshold.map(|t| t.epochs),
            config,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InexactnessReport {
    pub eps_sub: f64,
    /// `||ξ - ξ̂||`.
    pub dual_error: f64,
    /// `||x⁺ - x̂⁺||`.
    pub primal_error: f64,
    /// `ε_sub / μ*`.
    pub dual_bound: f64,
    /// `α sqrt(Ā) ε_sub / (μ* sqrt(b))`.
    pub primal_bound: f64,
    pub passed: bool,
}

/// Solves the subproblem at `eps_sub` and at [`REFERENCE_TOL`] from the
/// same start and compares both against the transfer bounds.
pub fn verify_inexactness(
    ctx: &SubproblemContext<'_>,
    params: &NewtonParams,
    eps_sub: f64,
    xi0: Vec<f64>,
) -> Result<InexactnessReport> {
    let loose = solve_subproblem(ctx, &NewtonParams { eps_sub, ..*params }, xi0.clone())?;
    let tight_params = NewtonParams {
        eps_sub: REFERENCE_TOL,
        max_iter: params.max_iter.max(200),
        ..*params
    };
    let tight = solve_subproblem(ctx, &tight_params, xi0)?;
    let c = ctx.problem().constants();
    let b = ctx.batch().len() as f64;
    let dual_error = dist(&loose.xi, &tight.xi);
    let primal_error = dist(&loose.x_plus, &tight.x_plus);
    let dual_bound = eps_sub / c.mu_star;
    let primal_bound = ctx.alpha() * c.a_bar.sqrt() * eps_sub / (c.mu_star * b.sqrt());
    Ok(InexactnessReport {
        eps_sub,
        dual_error,
        primal_error,
        dual_bound,
        primal_bound,
        passed: dual_error <= dual_bound && primal_error <= primal_bound,
    })
}

/// `||V(ξ) - ∇_FD U(ξ)|| / ||V(ξ)||` with central differences, step
/// shrunk to stay inside the conjugate domain.
pub fn dual_gradient_error(ctx: &SubproblemContext<'_>, xi: &[f64]) -> Result<f64> {
    let v = ctx.eval_v(xi)?;
    let mut fd = vec![0.0; xi.len()];
    let mut probe = xi.to_vec();
    for j in 0..xi.len() {
        let mut h = 1e-6 * xi[j].abs().max(1.0);
        while h > 1e-14 {
            probe[j] = xi[j] + h;
            let up = ctx.in_domain(&probe);
            probe[j] = xi[j] - h;
            if up && ctx.in_domain(&probe) {
                break;
            }
            h *= 0.5;
        }
        probe[j] = xi[j] + h;
        let up = ctx.eval_u(&probe)?;
        probe[j] = xi[j] - h;
        let down = ctx.eval_u(&probe)?;
        probe[j] = xi[j];
        fd[j] = (up - down) / (2.0 * h);
    }
    Ok(dist(&v, &fd) / norm(&v).max(f64::MIN_POSITIVE))
}

/// Last three residual ratios `||V^{j+1}|| / ||V^j||` strictly decrease
/// and the last one is at most `0.1`.
pub fn superlinear_tail(history: &[f64]) -> bool {
    if history.len() < 4 {
        return false;
    }
    let ratios: Vec<f64> = history.windows(2).map(|w| w[1] / w[0]).collect();
    let tail = &ratios[ratios.len() - 3..];
    tail[0] > tail[1] && tail[1] > tail[2] && tail[2] <= 0.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseRows, Design};
    use crate::losses::LossFamily;
    use crate::regularizers::Regularizer;

    fn ls(reg: Regularizer) -> Problem {
        let d = Design::Dense(DenseRows::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap());
        Problem::from_rows(d, vec![1.0, 2.0, 0.0], LossFamily::Squared, reg).unwrap()
    }

    #[test]
    fn fnat_without_regularizer_is_scaled_gradient() {
        let p = ls(Regularizer::Zero);
        let x = [0.3, -0.7];
        let g = p.full_gradient(&x).unwrap();
        let f = fnat(&p, &x, 0.5).unwrap();
        assert!(f.iter().zip(&g).all(|(a, b)| (a - 0.5 * b).abs() < 1e-15));
    }

    #[test]
    fn fnat_vanishes_at_least_squares_minimizer() {
        let p = ls(Regularizer::Zero);
        let a = p.design().to_dense();
        let b = nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let x = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * b));
        assert!(fnat_norm(&p, x.as_slice()).unwrap() < 1e-14);
    }

    #[test]
    fn fnat_lipschitz_sanity() {
        let p = ls(Regularizer::l1(0.3));
        let l = p.constants().l_smooth;
        let pts = [[0.0, 1.0], [2.0, -1.0], [-0.5, 0.25], [3.0, 3.0]];
        for x in &pts {
            for y in &pts {
                let fx = fnat(&p, x, 1.0).unwrap();
                let fy = fnat(&p, y, 1.0).unwrap();
                assert!(dist(&fx, &fy) <= (2.0 + l) * dist(x, y) + 1e-14);
            }
        }
    }

    #[test]
    fn recorder_stops_at_target() {
        let p = ls(Regularizer::Zero);
        let mut rec = Recorder::new(&p, "r", "m").with_target(f64::INFINITY);
        let cp = Checkpoint {
            s: 0,
            k: 0,
            grad_evals: 6,
            wall_time_s: 0.5,
            x: &[0.0, 0.0],
            newton_iters: 0,
            newton_residual: f64::NAN,
        };
        assert_eq!(rec.observe(&cp).unwrap(), Control::Stop);
        assert_eq!(rec.threshold().unwrap().epochs, 2.0);
        assert_eq!(rec.records.len(), 1);
    }

    #[test]
    fn superlinear_tail_rule() {
        assert!(superlinear_tail(&[1.0, 0.5, 0.1, 1e-3, 1e-7]));
        assert!(!superlinear_tail(&[1.0, 0.5, 0.25, 0.125]));
        assert!(!superlinear_tail(&[1.0, 0.1, 0.01]));
    }

    #[test]
    fn tight_reference_matches_itself() {
        let d = Design::Dense(DenseRows::from_rows(&[vec![1.0, -0.5], vec![0.3, 0.8]]).unwrap());
        let p = Problem::logistic(d, &[1.0, -1.0], Regularizer::l1(0.05)).unwrap();
        let (x, v) = ([0.2, 0.1], [0.0, 0.0]);
        let batch = [0, 1];
        let ctx = SubproblemContext::new(&p, &x, &v, 1.0, &batch).unwrap();
        let rep = verify_inexactness(&ctx, &NewtonParams::default(), REFERENCE_TOL, ctx.cold_start()).unwrap();
        assert!(rep.dual_error < 1e-14 && rep.primal_error < 1e-14);
        assert!(rep.passed);
    }
}
