//! Experiment configuration and orchestration behind the command line:
//! multi-seed runs, step/batch sweeps, optimum estimation and the
//! diagnostics suite.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{estimate_optimum, run_baseline, BaselineConfig, BaselineMethod, OptimumEstimate};
use crate::data::{self, Dataset, SyntheticSpec};
use crate::diagnostics::{dual_gradient_error, superlinear_tail, verify_inexactness, Recorder, RunSummary, TraceSink};
use crate::driver::{snspp_run, Sampler, Sampling, Schedule, SnsppConfig};
use crate::error::{Error, Result};
use crate::losses::LossFamily;
use crate::model::Problem;
use crate::monitor::{RunOutcome, RunStatus};
use crate::regularizers::Regularizer;
use crate::subsolver::{solve_subproblem, NewtonParams, SubproblemContext};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SNSPP_OUT_DIR";
/// Stationarity target of the optimum estimate.
pub const OPTIMUM_TOL: f64 = 1e-10;
pub const OPTIMUM_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    SparseText {
        path: PathBuf,
    },
    Delimited {
        path: PathBuf,
        #[serde(default)]
        target_column: usize,
    },
    /// Synthetic sparse regression; `binarize` turns targets into signs for
    /// classification.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        binarize: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub source: ProblemSource,
    pub loss: LossFamily,
    #[serde(default = "default_regularizer")]
    pub regularizer: Regularizer,
    /// Hold out this fraction of the samples as a test set.
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_regularizer() -> Regularizer {
    Regularizer::Zero
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    Snspp(SnsppConfig),
    Svrg(BaselineConfig),
    Saga(BaselineConfig),
    Adagrad(BaselineConfig),
    ProxGd(BaselineConfig),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Snspp(_) => "snspp",
            MethodSpec::Svrg(_) => "svrg",
            MethodSpec::Saga(_) => "saga",
            MethodSpec::Adagrad(_) => "adagrad",
            MethodSpec::ProxGd(_) => "prox_gd",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "snspp" => MethodSpec::Snspp(SnsppConfig::default()),
            "svrg" => MethodSpec::Svrg(BaselineConfig::default()),
            "saga" => MethodSpec::Saga(BaselineConfig::default()),
            "adagrad" => MethodSpec::Adagrad(BaselineConfig::default()),
            "prox_gd" => MethodSpec::ProxGd(BaselineConfig::default()),
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        })
    }

    fn baseline(&self) -> Option<(BaselineMethod, &BaselineConfig)> {
        match self {
            MethodSpec::Snspp(_) => None,
            MethodSpec::Svrg(c) => Some((BaselineMethod::Svrg, c)),
            MethodSpec::Saga(c) => Some((BaselineMethod::Saga, c)),
            MethodSpec::Adagrad(c) => Some((BaselineMethod::Adagrad, c)),
            MethodSpec::ProxGd(c) => Some((BaselineMethod::ProxGd, c)),
        }
    }

    fn baseline_mut(&mut self) -> Option<&mut BaselineConfig> {
        match self {
            MethodSpec::Snspp(_) => None,
            MethodSpec::Svrg(c) | MethodSpec::Saga(c) | MethodSpec::Adagrad(c) | MethodSpec::ProxGd(c) => Some(c),
        }
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        match self {
            MethodSpec::Snspp(c) => c.alpha = Schedule::Constant(alpha),
            other => other.baseline_mut().expect("baseline").alpha = alpha,
        }
    }

    pub fn set_batch(&mut self, batch: usize) {
        match self {
            MethodSpec::Snspp(c) => c.batch = Schedule::Constant(batch),
            other => other.baseline_mut().expect("baseline").batch = batch,
        }
    }

    fn set_seed(&mut self, seed: u64) {
        match self {
            MethodSpec::Snspp(c) => c.seed = seed,
            other => other.baseline_mut().expect("baseline").seed = seed,
        }
    }

    /// Budget-driven runs: iteration counts are unlimited and the epoch
    /// budget ends the run.
    fn set_budget(&mut self, epochs: f64) {
        match self {
            MethodSpec::Snspp(c) => {
                c.max_epochs = Some(epochs);
                c.outer_iters = usize::MAX;
            }
            other => {
                let c = other.baseline_mut().expect("baseline");
                c.max_epochs = Some(epochs);
                c.outer_iters = usize::MAX;
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::Snspp(c) => c.validate(usize::MAX),
            other => other.baseline().expect("baseline").1.validate(usize::MAX),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopConfig {
    /// Budget in epochs (single-sample gradient evaluations / N).
    pub budget_epochs: f64,
    /// Stop once `ψ(x) ≤ (1 + stop_rel) ψ*`.
    pub stop_rel: Option<f64>,
    /// Known optimal value; estimated when needed and absent.
    pub psi_star: Option<f64>,
}

impl Default for StopConfig {
    fn default() -> Self {
        StopConfig {
            budget_epochs: 100.0,
            stop_rel: None,
            psi_star: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemConfig,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    /// Small strongly convex lasso instance with every method.
    fn default() -> Self {
        let spec = SyntheticSpec {
            n: 20,
            n_samples: 100,
            nnz: 5,
            noise_scale: 0.1,
            noise_nu: 1.0,
            sv_range: [1.0, 3.0],
        };
        let mut snspp = SnsppConfig {
            alpha: Schedule::Constant(1.0),
            batch: Schedule::Constant(10),
            ..SnsppConfig::default()
        };
        snspp.newton.eps_sub = 1e-6;
        let base = |alpha: f64, batch: usize| BaselineConfig {
            alpha,
            batch,
            ..BaselineConfig::default()
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            problem: ProblemConfig {
                source: ProblemSource::Synthetic {
                    spec,
                    seed: 0,
                    binarize: false,
                },
                loss: LossFamily::Squared,
                regularizer: Regularizer::l1(0.01),
                test_fraction: None,
                split_seed: 0,
            },
            methods: vec![
                MethodSpec::Snspp(snspp),
                MethodSpec::Svrg(base(0.2, 1)),
                MethodSpec::Saga(base(0.2, 1)),
                MethodSpec::Adagrad(base(1.0, 10)),
                MethodSpec::ProxGd(base(10.0, 1)),
            ],
            seeds: vec![0],
            stop: StopConfig::default(),
            out_dir: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked before loading data and
    /// reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            problems.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.methods.is_empty() {
            problems.push("at least one method is required".to_string());
        }
        if self.seeds.is_empty() {
            problems.push("at least one seed is required".to_string());
        }
        match &self.problem.source {
            ProblemSource::SparseText { path } | ProblemSource::Delimited { path, .. } if !path.exists() => {
                problems.push(format!("data file {} does not exist", path.display()));
            }
            ProblemSource::Synthetic { spec, .. } => {
                if let Err(e) = spec.validate() {
                    problems.push(e.to_string());
                }
            }
            _ => {}
        }
        if let Err(e) = self.problem.loss.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.problem.regularizer.validate() {
            problems.push(e.to_string());
        }
        if let Some(f) = self.problem.test_fraction {
            if !(f > 0.0 && f < 1.0) {
                problems.push(format!("test_fraction must lie in (0, 1), got {f}"));
            }
        }
        if !(self.stop.budget_epochs > 0.0) {
            problems.push("budget_epochs must be positive".to_string());
        }
        if let Some(t) = self.stop.stop_rel {
            if !(t >= 0.0) {
                problems.push("stop_rel must be nonnegative".to_string());
            }
        }
        if self.workers == Some(0) {
            problems.push("workers must be at least 1".to_string());
        }
        for m in &self.methods {
            if let Err(e) = m.validate() {
                problems.push(format!("{}: {e}", m.name()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("snspp-out"))
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub methods: Option<Vec<String>>,
    pub alpha: Option<f64>,
    pub batch: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub budget_epochs: Option<f64>,
    pub stop_rel: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(names) = &self.methods {
            let mut picked = Vec::new();
            for name in names {
                let existing: Vec<MethodSpec> = cfg.methods.iter().filter(|m| m.name() == name).cloned().collect();
                if existing.is_empty() {
                    picked.push(MethodSpec::from_name(name)?);
                } else {
                    picked.extend(existing);
                }
            }
            cfg.methods = picked;
        }
        for m in &mut cfg.methods {
            if let Some(a) = self.alpha {
                m.set_alpha(a);
            }
            if let Some(b) = self.batch {
                m.set_batch(b);
            }
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(e) = self.budget_epochs {
            cfg.stop.budget_epochs = e;
        }
        if let Some(t) = self.stop_rel {
            cfg.stop.stop_rel = Some(t);
        }
        Ok(())
    }
}

/// Training problem, optional held-out problem, and a content hash.
pub struct BuiltProblem {
    pub train: Problem,
    pub test: Option<Problem>,
    pub dataset_hash: String,
}

fn to_problem(ds: &Dataset, pc: &ProblemConfig) -> Result<Problem> {
    match pc.loss {
        LossFamily::Logistic => Problem::logistic(ds.features.clone(), &ds.targets, pc.regularizer),
        loss => Problem::from_rows(ds.features.clone(), ds.targets.clone(), loss, pc.regularizer),
    }
}

fn dataset_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((ds.n_samples() as u64).to_le_bytes());
    h.update((ds.dim() as u64).to_le_bytes());
    for r in 0..ds.n_samples() {
        h.update(ds.targets[r].to_le_bytes());
        ds.features.for_each_in_row(r, |j, v| {
            h.update((j as u64).to_le_bytes());
            h.update(v.to_le_bytes());
        });
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_dataset(source: &ProblemSource) -> Result<Dataset> {
    match source {
        ProblemSource::SparseText { path } => data::load_sparse_text(path),
        ProblemSource::Delimited { path, target_column } => data::load_delimited(path, *target_column),
        ProblemSource::Synthetic { spec, seed, binarize } => {
            let (mut ds, _) = data::synth_student_t(spec, *seed)?;
            if *binarize {
                ds.targets
                    .iter_mut()
                    .for_each(|t| *t = if *t >= 0.0 { 1.0 } else { -1.0 });
            }
            Ok(ds)
        }
    }
}

pub fn build_problem(pc: &ProblemConfig) -> Result<BuiltProblem> {
    let ds = load_dataset(&pc.source)?;
    let dataset_hash = dataset_hash(&ds);
    let (train, test) = match pc.test_fraction {
        Some(f) => {
            let (tr, te) = data::split(&ds, 1.0 - f, pc.split_seed)?;
            (to_problem(&tr, pc)?, Some(to_problem(&te, pc)?))
        }
        None => (to_problem(&ds, pc)?, None),
    };
    Ok(BuiltProblem {
        train,
        test,
        dataset_hash,
    })
}

/// Runs one configured method from the origin.
pub fn run_method(
    problem: &Problem,
    spec: &MethodSpec,
    monitor: &mut dyn crate::monitor::Monitor,
) -> Result<RunOutcome> {
    let x0 = vec![0.0; problem.dim()];
    match spec {
        MethodSpec::Snspp(c) => snspp_run(problem, c, &x0, monitor),
        other => {
            let (m, c) = other.baseline().expect("baseline");
            run_baseline(m, problem, c, &x0, monitor)
        }
    }
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// Run ids: the method name, with a position suffix when a method appears
/// more than once.
fn method_labels(methods: &[MethodSpec]) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for m in methods {
        *counts.entry(m.name()).or_default() += 1;
    }
    methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if counts[m.name()] > 1 {
                format!("{}-{i}", m.name())
            } else {
                m.name().to_string()
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimumRecord {
    pub dataset_hash: String,
    pub objective: f64,
    pub fnat_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub step: f64,
}

pub fn optimum(
    problem: &Problem,
    dataset_hash: &str,
    tol: f64,
    max_iter: usize,
) -> Result<(OptimumRecord, OptimumEstimate)> {
    let est = estimate_optimum(problem, &vec![0.0; problem.dim()], None, tol, max_iter)?;
    let rec = OptimumRecord {
        dataset_hash: dataset_hash.to_string(),
        objective: est.objective,
        fnat_norm: est.fnat_norm,
        iterations: est.iterations,
        converged: est.converged,
        step: est.step,
    };
    Ok((rec, est))
}

/// `(1 + stop_rel) ψ*`, estimating `ψ*` when it is not configured.
fn stop_target(cfg: &ExperimentConfig, built: &BuiltProblem) -> Result<Option<f64>> {
    let Some(rel) = cfg.stop.stop_rel else {
        return Ok(None);
    };
    let psi_star = match cfg.stop.psi_star {
        Some(v) => v,
        None => {
            optimum(&built.train, &built.dataset_hash, OPTIMUM_TOL, OPTIMUM_MAX_ITER)?
                .0
                .objective
        }
    };
    Ok(Some((1.0 + rel) * psi_star))
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
    pub time_to_threshold: Option<f64>,
    pub wall_time_s: f64,
}

#[allow(clippy::too_many_arguments)]
fn execute(
    built: &BuiltProblem,
    spec: &MethodSpec,
    label: &str,
    seed: u64,
    target: Option<f64>,
    budget: f64,
    out_dir: &Path,
    problem_cfg: &ProblemConfig,
) -> Result<RunArtifacts> {
    let run_id = format!("{label}_seed{seed}");
    let mut spec = spec.clone();
    spec.set_seed(seed);
    spec.set_budget(budget);
    let trace_path = out_dir.join("traces").join(format!("{run_id}.csv"));
    let summary_path = out_dir.join("summaries").join(format!("{run_id}.json"));
    let sink = TraceSink::create(&trace_path)?;
    let mut rec = Recorder::new(&built.train, &run_id, spec.name()).with_sink(&sink);
    if let Some(t) = &built.test {
        rec = rec.with_test(t);
    }
    if let Some(t) = target {
        rec = rec.with_target(t);
    }
    let echo = serde_json::json!({
        "problem": problem_cfg,
        "method": spec,
        "seed": seed,
        "budget_epochs": budget,
        "target_objective": target,
    });
    let outcome = match run_method(&built.train, &spec, &mut rec) {
        Ok(o) => o,
        Err(e) => RunOutcome {
            x: vec![0.0; built.train.dim()],
            x_uniform: None,
            status: RunStatus::Failed(e.to_string()),
            grad_evals: rec.last().map_or(0, |r| r.grad_evals),
            wall_time_s: rec.last().map_or(0.0, |r| r.wall_time_s),
            outer_iters: 0,
            newton_iters: 0,
            retries: 0,
            final_alpha: f64::NAN,
        },
    };
    sink.flush()?;
    let threshold = rec.threshold();
    let summary = RunSummary::from_outcome(&built.train, &outcome, &run_id, spec.name(), seed, threshold, echo);
    summary.write(&summary_path)?;
    Ok(RunArtifacts {
        summary,
        trace_path,
        summary_path,
        time_to_threshold: threshold.map(|t| t.wall_time_s),
        wall_time_s: outcome.wall_time_s,
    })
}

/// One trace and one summary per (method, seed).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunArtifacts>> {
    cfg.validate()?;
    let built = build_problem(&cfg.problem)?;
    let out_dir = cfg.resolved_out_dir();
    fs::create_dir_all(out_dir.join("traces"))?;
    fs::create_dir_all(out_dir.join("summaries"))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    let target = stop_target(cfg, &built)?;
    let labels = method_labels(&cfg.methods);
    let jobs: Vec<(usize, u64)> = (0..cfg.methods.len())
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = thread_pool(cfg.workers)?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(m, seed)| {
                execute(
                    &built,
                    &cfg.methods[m],
                    &labels[m],
                    seed,
                    target,
                    cfg.stop.budget_epochs,
                    &out_dir,
                    &cfg.problem,
                )
            })
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub alpha: f64,
    pub batch: usize,
    pub seeds: usize,
    pub reached: usize,
    /// At least one seed missed the target within the budget; its time
    /// enters the statistics as the time at which the budget ran out.
    pub censored: bool,
    pub mean_time_s: f64,
    pub std_time_s: f64,
    pub mean_epochs: f64,
    pub std_epochs: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Time- and epochs-to-threshold for every `(method, α, b)` cell.
pub fn sweep(cfg: &ExperimentConfig, alphas: &[f64], batches: &[usize]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if alphas.is_empty() || batches.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".to_string()));
    }
    let built = build_problem(&cfg.problem)?;
    let target =
        stop_target(cfg, &built)?.ok_or_else(|| Error::Config("sweep needs a stop rule (stop_rel)".to_string()))?;
    let mut cells = Vec::new();
    for m in &cfg.methods {
        for &a in alphas {
            for &b in batches {
                let mut spec = m.clone();
                spec.set_alpha(a);
                spec.set_batch(b);
                cells.push(spec);
            }
        }
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = thread_pool(cfg.workers)?;
    let budget = cfg.stop.budget_epochs;
    let results: Vec<(f64, f64, bool)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let mut spec = cells[c].clone();
                spec.set_seed(seed);
                spec.set_budget(budget);
                let mut rec = Recorder::new(&built.train, "sweep", spec.name()).with_target(target);
                let out = run_method(&built.train, &spec, &mut rec);
                match (rec.threshold(), out) {
                    (Some(t), _) => (t.wall_time_s, t.epochs, true),
                    (None, Ok(o)) => (
                        o.wall_time_s,
                        o.grad_evals as f64 / built.train.n_samples() as f64,
                        false,
                    ),
                    (None, Err(_)) => (f64::NAN, budget, false),
                }
            })
            .collect()
    });
    let per = cfg.seeds.len();
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let chunk = &results[c * per..(c + 1) * per];
            let times: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let epochs: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            let reached = chunk.iter().filter(|r| r.2).count();
            let (mean_time_s, std_time_s) = mean_std(&times);
            let (mean_epochs, std_epochs) = mean_std(&epochs);
            let (alpha, batch) = match spec {
                MethodSpec::Snspp(s) => (s.alpha.at(0), s.batch.at(0)),
                other => {
                    let b = other.baseline().expect("baseline").1;
                    (b.alpha, b.batch)
                }
            };
            SweepRow {
                method: spec.name().to_string(),
                alpha,
                batch,
                seeds: per,
                reached,
                censored: reached < per,
                mean_time_s,
                std_time_s,
                mean_epochs,
                std_epochs,
            }
        })
        .collect())
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub instances: usize,
    /// Largest `||V - ∇_FD U|| / ||V||`.
    pub max_gradient_error: f64,
    pub gradient_passed: usize,
    /// Instances satisfying both inexactness bounds at `ε_sub = 1e-3`.
    pub inexactness_passed: usize,
    /// Instances whose Newton residuals show a superlinear tail.
    pub superlinear_passed: usize,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.gradient_passed == self.instances && self.inexactness_passed == self.instances
    }
}

/// Subproblem diagnostics on random batches, anchors and dual points of
/// `problem`.
pub fn verify_suite(problem: &Problem, seed: u64, instances: usize, batch: usize) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = Sampler::new(seed, Sampling::WithReplacement);
    let n = problem.dim();
    let loss = problem.loss();
    let mut report = VerifyReport {
        instances,
        max_gradient_error: 0.0,
        gradient_passed: 0,
        inexactness_passed: 0,
        superlinear_passed: 0,
    };
    for _ in 0..instances {
        let b = batch.min(problem.n_samples()).max(1);
        let s = sampler.sample_batch(problem.n_samples(), b)?;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| 0.1 * rng.random_range(-1.0..1.0)).collect();
        let alpha = rng.random_range(0.1..2.0);
        let ctx = SubproblemContext::new(problem, &x, &v, alpha, &s)?;
        let xi: Vec<f64> = (0..ctx.dual_dim())
            .map(|_| match loss {
                LossFamily::Logistic => rng.random_range(-0.95..-0.05),
                _ => rng.random_range(-1.0..1.0),
            })
            .collect();
        let err = dual_gradient_error(&ctx, &xi)?;
        report.max_gradient_error = report.max_gradient_error.max(err);
        report.gradient_passed += usize::from(err <= 1e-5);
        let params = NewtonParams::default();
        if verify_inexactness(&ctx, &params, 1e-3, ctx.cold_start())?.passed {
            report.inexactness_passed += 1;
        }
        let tight = NewtonParams {
            eps_sub: 1e-11,
            ..params
        };
        let sol = solve_subproblem(&ctx, &tight, ctx.cold_start())?;
        report.superlinear_passed += usize::from(superlinear_tail(&sol.stats.residual_history));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let text = r#"
schema_version = 1
seeds = [1, 2]

[problem]
loss = { kind = "logistic" }
regularizer = { kind = "l1", lambda = 0.01 }
source = { kind = "synthetic", binarize = true, spec = { n = 10, n_samples = 30, nnz = 3 } }

[[methods]]
method = "snspp"
alpha = 2.0
batch = 5

[[methods]]
method = "svrg"
alpha = 0.5
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.methods.len(), 2);
        match &cfg.methods[0] {
            MethodSpec::Snspp(c) => {
                assert_eq!(c.alpha, Schedule::Constant(2.0));
                assert_eq!(c.inner_len, 10);
                assert_eq!(c.newton.eps_sub, 1e-3);
            }
            _ => panic!("expected snspp"),
        }
        assert_eq!(cfg.stop.budget_epochs, 100.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::default().to_toml().unwrap();
        text.push_str("\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = ExperimentConfig {
            schema_version: 7,
            ..ExperimentConfig::default()
        };
        cfg.seeds.clear();
        cfg.methods.clear();
        cfg.stop.budget_epochs = 0.0;
        let msg = cfg.validate().unwrap_err().to_string();
        for needle in ["schema_version", "seed", "method", "budget"] {
            assert!(msg.contains(needle), "{msg}");
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ExperimentConfig::default();
        let ov = Overrides {
            methods: Some(vec!["saga".into(), "snspp".into()]),
            alpha: Some(0.3),
            batch: Some(4),
            seeds: Some(vec![5]),
            budget_epochs: Some(7.0),
            ..Default::default()
        };
        ov.apply(&mut cfg).unwrap();
        assert_eq!(
            cfg.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
            vec!["saga", "snspp"]
        );
        match &cfg.methods[1] {
            MethodSpec::Snspp(c) => assert_eq!((c.alpha.at(0), c.batch.at(0)), (0.3, 4)),
            _ => panic!(),
        }
        assert_eq!(cfg.seeds, vec![5]);
        assert_eq!(cfg.stop.budget_epochs, 7.0);
        assert!(Overrides {
            methods: Some(vec!["nope".into()]),
            ..Default::default()
        }
        .apply(&mut cfg)
        .is_err());
    }

    #[test]
    fn duplicate_methods_get_distinct_labels() {
        let m = vec![
            MethodSpec::from_name("svrg").unwrap(),
            MethodSpec::from_name("svrg").unwrap(),
            MethodSpec::from_name("saga").unwrap(),
        ];
        assert_eq!(method_labels(&m), vec!["svrg-0", "svrg-1", "saga"]);
    }
}
