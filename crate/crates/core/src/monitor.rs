//! Progress hooks shared by SNSPP and the baselines.
//!
//! Every method reports checkpoints to a [`Monitor`]; the time spent inside
//! the monitor (metric evaluation, trace I/O) is excluded from the reported
//! wall time.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::norm;

/// Iterates with a larger norm are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e10;

#[derive(Clone, Copy, Debug)]
pub struct Checkpoint<'a> {
    /// Outer counter (epochs for methods without an outer loop).
    pub s: usize,
    /// Inner counter within `s`.
    pub k: usize,
    /// Cumulative single-sample gradient evaluations.
    pub grad_evals: u64,
    pub wall_time_s: f64,
    pub x: &'a [f64],
    /// Newton iterations spent since the previous checkpoint.
    pub newton_iters: usize,
    /// Last subproblem residual `||V||`, `NaN` for explicit methods.
    pub newton_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

pub trait Monitor {
    fn observe(&mut self, cp: &Checkpoint<'_>) -> Result<Control>;
}

impl<F> Monitor for F
where
    F: FnMut(&Checkpoint<'_>) -> Result<Control>,
{
    fn observe(&mut self, cp: &Checkpoint<'_>) -> Result<Control> {
        self(cp)
    }
}

/// Monitor that never stops a run.
#[derive(Clone, Copy, Debug, Default)]
pub struct Silent;

impl Monitor for Silent {
    fn observe(&mut self, _: &Checkpoint<'_>) -> Result<Control> {
        Ok(Control::Continue)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "snake_case")]
pub enum RunStatus {
    /// Ran the configured number of iterations.
    Completed,
    /// The monitor asked to stop (stop rule reached).
    Stopped,
    /// The epoch budget ran out first.
    BudgetExhausted,
    /// `||x|| > 1e10`.
    Diverged,
    /// A subproblem or oracle failed; the iterate is the last good one.
    Failed(String),
}

impl RunStatus {
    pub fn is_failure(&self) -> bool {
        matches!(self, RunStatus::Diverged | RunStatus::Failed(_))
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub x: Vec<f64>,
    /// Iterate drawn uniformly from all inner iterates, when tracked.
    pub x_uniform: Option<Vec<f64>>,
    pub status: RunStatus,
    pub grad_evals: u64,
    pub wall_time_s: f64,
    pub outer_iters: usize,
    pub newton_iters: usize,
    /// Number of step-size halvings after subproblem failures.
    pub retries: usize,
    pub final_alpha: f64,
}

/// Wall clock that can be paused around monitor calls.
#[derive(Debug)]
pub(crate) struct Stopwatch {
    start: Instant,
    excluded: Duration,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch {
            start: Instant::now(),
            excluded: Duration::ZERO,
        }
    }

    pub(crate) fn elapsed_s(&self) -> f64 {
        self.start.elapsed().saturating_sub(self.excluded).as_secs_f64()
    }

    /// Runs `f` with the clock stopped.
    pub(crate) fn paused<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.excluded += t0.elapsed();
        out
    }
}

/// Shared checkpoint bookkeeping: budget, divergence and monitor calls.
pub(crate) struct Reporter<'m> {
    pub(crate) monitor: &'m mut dyn Monitor,
    pub(crate) clock: Stopwatch,
    pub(crate) max_grad_evals: Option<u64>,
}

impl<'m> Reporter<'m> {
    pub(crate) fn new(monitor: &'m mut dyn Monitor, max_epochs: Option<f64>, n_samples: usize) -> Self {
        Reporter {
            monitor,
            clock: Stopwatch::start(),
            max_grad_evals: max_epochs.map(|e| (e * n_samples as f64).ceil() as u64),
        }
    }

    /// Reports a checkpoint and returns the status that ends the run, if any.
    pub(crate) fn report(
        &mut self,
        s: usize,
        k: usize,
        grad_evals: u64,
        x: &[f64],
        newton_iters: usize,
        newton_residual: f64,
    ) -> Result<Option<RunStatus>> {
        if !x.iter().all(|v| v.is_finite()) || norm(x) > DIVERGENCE_NORM {
            return Ok(Some(RunStatus::Diverged));
        }
        let wall_time_s = self.clock.elapsed_s();
        let cp = Checkpoint {
            s,
            k,
            grad_evals,
            wall_time_s,
            x,
            newton_iters,
            newton_residual,
        };
        let monitor = &mut *self.monitor;
        let control = self.clock.paused(|| monitor.observe(&cp))?;
        if control == Control::Stop {
            return Ok(Some(RunStatus::Stopped));
        }
        if self.budget_spent(grad_evals) {
            return Ok(Some(RunStatus::BudgetExhausted));
        }
        Ok(None)
    }

    pub(crate) fn budget_spent(&self, grad_evals: u64) -> bool {
        self.max_grad_evals.is_some_and(|cap| grad_evals >= cap)
    }

    pub(crate) fn elapsed_s(&self) -> f64 {
        self.clock.elapsed_s()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paused_time_is_excluded() {
        let mut w = Stopwatch::start();
        w.paused(|| std::thread::sleep(Duration::from_millis(30)));
        assert!(w.elapsed_s() < 0.02);
    }

    #[test]
    fn reporter_flags_divergence_and_budget() {
        let mut m = Silent;
        let mut r = Reporter::new(&mut m, Some(2.0), 10);
        assert_eq!(r.report(0, 0, 0, &[1.0], 0, f64::NAN).unwrap(), None);
        assert_eq!(
            r.report(0, 0, 0, &[2e10], 0, f64::NAN).unwrap(),
            Some(RunStatus::Diverged)
        );
        assert_eq!(
            r.report(1, 0, 20, &[1.0], 0, f64::NAN).unwrap(),
            Some(RunStatus::BudgetExhausted)
        );
    }

    #[test]
    fn closure_monitor_can_stop() {
        let mut calls = 0;
        let mut m = |cp: &Checkpoint<'_>| {
            calls += 1;
            Ok(if cp.s >= 1 { Control::Stop } else { Control::Continue })
        };
        {
            let mut r = Reporter::new(&mut m, None, 1);
            assert_eq!(r.report(0, 0, 0, &[0.0], 0, 0.0).unwrap(), None);
            assert_eq!(r.report(1, 0, 0, &[0.0], 0, 0.0).unwrap(), Some(RunStatus::Stopped));
        }
        assert_eq!(calls, 2);
    }
}
