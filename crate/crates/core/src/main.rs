use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snspp::experiment::{
    self, build_problem, optimum, run_experiment, sweep, verify_suite, write_sweep, ExperimentConfig, Overrides,
    OPTIMUM_MAX_ITER, OPTIMUM_TOL,
};
use snspp::Result;

#[derive(Parser)]
#[command(name = "snspp", version, about = "Stochastic proximal point experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method for every seed.
    Run(Common),
    /// Time-to-threshold over a grid of step and batch sizes.
    Sweep(Common),
    /// Estimate ψ* with long proximal gradient runs.
    EstimateOptimum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = OPTIMUM_TOL)]
        tol: f64,
        #[arg(long, default_value_t = OPTIMUM_MAX_ITER)]
        max_iter: usize,
    },
    /// Subproblem diagnostics on random instances of the configured problem.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; built-in lasso toy when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Step size (a grid for `sweep`).
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Batch size (a grid for `sweep`).
    #[arg(long, value_delimiter = ',')]
    batch: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, env = experiment::OUT_DIR_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    budget_epochs: Option<f64>,
    /// Stop once ψ(x) ≤ (1 + stop_rel) ψ*.
    #[arg(long)]
    stop_rel: Option<f64>,
}

fn single<T: Copy>(name: &str, v: &Option<Vec<T>>) -> Result<Option<T>> {
    match v.as_deref() {
        None => Ok(None),
        Some([x]) => Ok(Some(*x)),
        Some(_) => Err(snspp::Error::Config(format!(
            "--{name} takes one value outside `sweep`"
        ))),
    }
}

fn load(common: &Common, grid: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let ov = Overrides {
        methods: common.method.clone(),
        alpha: if grid { None } else { single("alpha", &common.alpha)? },
        batch: if grid { None } else { single("batch", &common.batch)? },
        seeds: common.seeds.clone(),
        out: common.out.clone(),
        workers: common.workers,
        budget_epochs: common.budget_epochs,
        stop_rel: common.stop_rel,
    };
    ov.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common, false)?;
            let runs = run_experiment(&cfg)?;
            let mut ok = true;
            for r in &runs {
                let s = &r.summary;
                ok &= !s.status.is_failure();
                println!(
                    "{:<20} {:?} objective={:.10e} fnat={:.3e} epochs={:.2} trace={}",
                    s.run_id,
                    s.status,
                    s.final_objective,
                    s.final_fnat_norm,
                    s.epochs,
                    r.trace_path.display()
                );
            }
            Ok(ok)
        }
        Command::Sweep(common) => {
            let mut cfg = load(&common, true)?;
            if cfg.stop.stop_rel.is_none() {
                cfg.stop.stop_rel = Some(1e-4);
            }
            let alphas = common
                .alpha
                .clone()
                .ok_or_else(|| snspp::Error::Config("sweep needs --alpha".into()))?;
            let batches = common.batch.clone().unwrap_or_else(|| vec![1]);
            let rows = sweep(&cfg, &alphas, &batches)?;
            let out = cfg.resolved_out_dir();
            std::fs::create_dir_all(&out)?;
            let path = out.join("sweep.csv");
            write_sweep(&path, &rows)?;
            for r in &rows {
                println!(
                    "{:<8} alpha={:<10} b={:<5} reached={}/{} time={:.4}±{:.4}s{}",
                    r.method,
                    r.alpha,
                    r.batch,
                    r.reached,
                    r.seeds,
                    r.mean_time_s,
                    r.std_time_s,
                    if r.censored { " (censored)" } else { "" }
                );
            }
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::EstimateOptimum { common, tol, max_iter } => {
            let cfg = load(&common, false)?;
            let built = build_problem(&cfg.problem)?;
            let (rec, _) = optimum(&built.train, &built.dataset_hash, tol, max_iter)?;
            let out = cfg.resolved_out_dir();
            std::fs::create_dir_all(&out)?;
            let path = out.join("optimum.json");
            std::fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n")?;
            println!(
                "psi* = {:.15e} (fnat {:.3e}, {} iterations, converged: {}) -> {}",
                rec.objective,
                rec.fnat_norm,
                rec.iterations,
                rec.converged,
                path.display()
            );
            Ok(rec.converged)
        }
        Command::Verify { common, instances } => {
            let cfg = load(&common, false)?;
            let built = build_problem(&cfg.problem)?;
            let batch = single("batch", &common.batch)?.unwrap_or(8);
            let seed = cfg.seeds[0];
            let rep = verify_suite(&built.train, seed, instances, batch)?;
            let line = |name: &str, passed: usize| {
                let tag = if passed == instances { "PASS" } else { "FAIL" };
                println!("{tag} {name}: {passed}/{instances}");
            };
            line("dual gradient identity", rep.gradient_passed);
            line("inexactness bounds", rep.inexactness_passed);
            println!("info superlinear tail: {}/{}", rep.superlinear_passed, instances);
            println!("max relative gradient error {:.3e}", rep.max_gradient_error);
            Ok(rep.all_passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
