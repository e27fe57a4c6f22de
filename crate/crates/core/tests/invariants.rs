use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snspp::baselines::{run_baseline, BaselineConfig, BaselineMethod};
use snspp::driver::{snspp_run, Schedule, SnsppConfig};
use snspp::linalg::{DenseRows, Design};
use snspp::losses::LossFamily;
use snspp::model::Problem;
use snspp::monitor::{Checkpoint, Control, RunStatus};
use snspp::regularizers::Regularizer;
use snspp::subsolver::{solve_subproblem, NewtonParams, SubproblemContext};

fn problem(seed: u64, family: u8) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_samples, n) = (30, 8);
    let rows: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let design = Design::Dense(DenseRows::from_rows(&rows).unwrap());
    let reg = Regularizer::l1(0.02);
    match family {
        0 => {
            let labels: Vec<f64> = (0..n_samples).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            Problem::logistic(design, &labels, reg).unwrap()
        }
        1 => {
            let t = (0..n_samples).map(|_| rng.random_range(-2.0..2.0)).collect();
            Problem::from_rows(design, t, LossFamily::StudentT { nu: 1.0 }, reg).unwrap()
        }
        _ => {
            let t = (0..n_samples).map(|_| rng.random_range(-2.0..2.0)).collect();
            Problem::from_rows(design, t, LossFamily::Squared, reg).unwrap()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solved_subproblem_meets_tolerance(seed in 0u64..1000, family in 0u8..3, b in 1usize..8, alpha in 0.05f64..5.0) {
        let p = problem(seed, family);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let batch: Vec<usize> = (0..b).map(|_| rng.random_range(0..p.n_samples())).collect();
        let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-0.1..0.1)).collect();
        let ctx = SubproblemContext::new(&p, &x, &shift, alpha, &batch).unwrap();
        let params = NewtonParams { eps_sub: 1e-9, ..NewtonParams::default() };
        let sol = solve_subproblem(&ctx, &params, ctx.cold_start()).unwrap();
        prop_assert!(ctx.in_domain(&sol.xi));
        let v = ctx.eval_v(&sol.xi).unwrap();
        prop_assert!(v.iter().map(|a| a * a).sum::<f64>().sqrt() <= 1e-9);
        prop_assert_eq!(&sol.x_plus, &ctx.primal(&sol.xi));
        let h = &sol.stats.residual_history;
        prop_assert_eq!(h.len(), sol.stats.iterations + 1);
    }

    #[test]
    fn solution_minimizes_dual_objective(seed in 0u64..1000, family in 0u8..3, alpha in 0.05f64..5.0) {
        let p = problem(seed, family);
        let batch: Vec<usize> = (0..6).collect();
        let x = vec![0.3; p.dim()];
        let shift = vec![0.0; p.dim()];
        let ctx = SubproblemContext::new(&p, &x, &shift, alpha, &batch).unwrap();
        let params = NewtonParams { eps_sub: 1e-10, ..NewtonParams::default() };
        let sol = solve_subproblem(&ctx, &params, ctx.cold_start()).unwrap();
        let u = ctx.eval_u(&sol.xi).unwrap();
        prop_assert!(u <= ctx.eval_u(&ctx.cold_start()).unwrap() + 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        for _ in 0..20 {
            let probe: Vec<f64> = sol.xi.iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect();
            if ctx.in_domain(&probe) {
                prop_assert!(u <= ctx.eval_u(&probe).unwrap() + 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn newton_matrix_is_symmetric_positive_definite(seed in 0u64..1000, family in 0u8..3, b in 1usize..8, alpha in 0.05f64..5.0) {
        let p = problem(seed, family);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let batch: Vec<usize> = (0..b).map(|_| rng.random_range(0..p.n_samples())).collect();
        let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = vec![0.0; p.dim()];
        let ctx = SubproblemContext::new(&p, &x, &shift, alpha, &batch).unwrap();
        let w = ctx.assemble_w(&ctx.cold_start()).unwrap().to_dense();
        prop_assert!((&w - w.transpose()).abs().max() <= 1e-14);
        prop_assert!(w.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn checkpoints_are_ordered_and_within_budget(seed in 0u64..200, family in 0u8..3, method in 0usize..5, batch in 1usize..6) {
        let p = problem(seed % 7, family);
        let budget = 4.0;
        let mut seen: Vec<(usize, usize, u64)> = Vec::new();
        let mut mon = |cp: &Checkpoint<'_>| {
            seen.push((cp.s, cp.k, cp.grad_evals));
            Ok(Control::Continue)
        };
        let x0 = vec![0.0; p.dim()];
        let out = if method == 0 {
            let cfg = SnsppConfig {
                alpha: Schedule::Constant(0.5),
                batch: Schedule::Constant(batch),
                outer_iters: usize::MAX,
                max_epochs: Some(budget),
                seed,
                ..SnsppConfig::default()
            };
            snspp_run(&p, &cfg, &x0, &mut mon).unwrap()
        } else {
            let m = [BaselineMethod::Svrg, BaselineMethod::Saga, BaselineMethod::Adagrad, BaselineMethod::ProxGd][method - 1];
            let cfg = BaselineConfig {
                alpha: 0.05,
                batch,
                outer_iters: usize::MAX,
                max_epochs: Some(budget),
                seed,
                ..BaselineConfig::default()
            };
            run_baseline(m, &p, &cfg, &x0, &mut mon).unwrap()
        };
        prop_assert_eq!(out.status, RunStatus::BudgetExhausted);
        prop_assert_eq!(seen[0], (0, 0, 0));
        prop_assert!(seen.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1) && w[0].2 <= w[1].2));
        let n = p.n_samples() as u64;
        let last = seen.last().unwrap().2;
        prop_assert_eq!(last, out.grad_evals);
        prop_assert!(last >= 4 * n);
        // One outer iteration (full gradient plus a pass of inner steps) may overshoot.
        prop_assert!(last <= 4 * n + 2 * n + batch as u64 * n);
    }

    #[test]
    fn runs_repeat_bit_for_bit(seed in 0u64..1000, family in 0u8..3) {
        let p = problem(3, family);
        let cfg = SnsppConfig {
            alpha: Schedule::Constant(0.5),
            batch: Schedule::Constant(4),
            outer_iters: 3,
            seed,
            ..SnsppConfig::default()
        };
        let x0 = vec![0.1; p.dim()];
        let a = snspp_run(&p, &cfg, &x0, &mut snspp::monitor::Silent).unwrap();
        let b = snspp_run(&p, &cfg, &x0, &mut snspp::monitor::Silent).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.grad_evals, b.grad_evals);
    }
}
