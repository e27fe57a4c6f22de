//! The composite problem `ψ(x) = (1/N) Σ f_i(A_i x) + φ(x)`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Design;
use crate::losses::LossFamily;
use crate::regularizers::Regularizer;

/// A primal iterate: a finite vector of the problem dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalPoint(Vec<f64>);

impl PrimalPoint {
    pub fn new(values: Vec<f64>, dim: usize) -> Result<Self> {
        if values.len() != dim {
            return Err(Error::invalid(format!(
                "point has length {}, problem dimension is {dim}",
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("point entry {j} is not finite")));
        }
        Ok(PrimalPoint(values))
    }

    pub fn zeros(dim: usize) -> Self {
        PrimalPoint(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PrimalPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Problem-level constants, computed once at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// `||A_i||²` (spectral) per sample.
    pub block_norm_sq: Vec<f64>,
    /// `(1/N) Σ L_i ||A_i||²`.
    pub l_avg: f64,
    /// Upper bound on the Lipschitz constant `L` of `∇f`: the smaller of
    /// `l_avg` and `max_i L_i · ||A||² / N`.
    pub l_smooth: f64,
    /// `L̄ = max_i L_i ||A_i||²`.
    pub l_bar: f64,
    /// `Ā = max_i ||A_i||²`.
    pub a_bar: f64,
    /// `M̄ = max_i γ_i · Ā`.
    pub m_bar: f64,
    /// `μ* = min_i 1/(L_i + γ_i)`.
    pub mu_star: f64,
}

/// Constants plus the step-size bounds for a given batch size and
/// inner-loop length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub constants: Constants,
    pub batch: usize,
    pub inner_len: usize,
    pub eta_bar: f64,
    /// Largest step covered by the weakly convex rate.
    pub safe_step: f64,
    /// Step bound `[L + sqrt(2/b) m L̄]^{-1}` for the q-linear rate with
    /// last-iterate snapshots.
    pub strongly_convex_step: f64,
}

#[derive(Clone, Debug)]
pub struct Problem {
    design: Design,
    /// Sample `i` owns design rows `block_ptr[i]..block_ptr[i + 1]`.
    block_ptr: Vec<usize>,
    targets: Vec<f64>,
    loss: LossFamily,
    gammas: Vec<f64>,
    regularizer: Regularizer,
    constants: Constants,
}

impl Problem {
    /// General constructor with explicit sample blocks and weak-convexity
    /// constants.
    pub fn new(
        design: Design,
        block_ptr: Vec<usize>,
        targets: Vec<f64>,
        loss: LossFamily,
        gammas: Vec<f64>,
        regularizer: Regularizer,
    ) -> Result<Self> {
        loss.validate()?;
        regularizer.validate()?;
        let n_samples = block_ptr.len().saturating_sub(1);
        if n_samples == 0 || block_ptr[0] != 0 {
            return Err(Error::invalid("need at least one sample block starting at row 0"));
        }
        if block_ptr.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("every sample block needs at least one row"));
        }
        if block_ptr[n_samples] != design.nrows() {
            return Err(Error::invalid(format!(
                "sample blocks cover {} rows, matrix has {}",
                block_ptr[n_samples],
                design.nrows()
            )));
        }
        if design.ncols() == 0 {
            return Err(Error::invalid("problem dimension must be positive"));
        }
        if targets.len() != design.nrows() {
            return Err(Error::invalid(format!(
                "{} targets for {} rows",
                targets.len(),
                design.nrows()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("targets must be finite"));
        }
        if gammas.len() != n_samples {
            return Err(Error::invalid(format!(
                "{} gammas for {n_samples} samples",
                gammas.len()
            )));
        }
        for &g in &gammas {
            loss.check_gamma(g)?;
        }
        let constants = compute_constants(&design, &block_ptr, loss, &gammas)?;
        Ok(Problem {
            design,
            block_ptr,
            targets,
            loss,
            gammas,
            regularizer,
            constants,
        })
    }

    /// One row per sample, with the family's default `γ`.
    pub fn from_rows(design: Design, targets: Vec<f64>, loss: LossFamily, regularizer: Regularizer) -> Result<Self> {
        let rows = design.nrows();
        let gamma = loss.default_gamma();
        Problem::new(
            design,
            (0..=rows).collect(),
            targets,
            loss,
            vec![gamma; rows],
            regularizer,
        )
    }

    /// Logistic regression with `±1` labels folded into the rows
    /// (`A_i = b_i a_i`).
    pub fn logistic(mut design: Design, labels: &[f64], regularizer: Regularizer) -> Result<Self> {
        if labels.len() != design.nrows() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                design.nrows()
            )));
        }
        for (r, &b) in labels.iter().enumerate() {
            if b != 1.0 && b != -1.0 {
                return Err(Error::invalid(format!("logistic label {b} at row {r} is not ±1")));
            }
            if b < 0.0 {
                design.scale_row(r, -1.0);
            }
        }
        Problem::from_rows(design, vec![0.0; labels.len()], LossFamily::Logistic, regularizer)
    }

    pub fn with_regularizer(&self, regularizer: Regularizer) -> Result<Self> {
        regularizer.validate()?;
        Ok(Problem {
            regularizer,
            ..self.clone()
        })
    }

    /// `N`.
    pub fn n_samples(&self) -> usize {
        self.block_ptr.len() - 1
    }

    /// `n`.
    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn loss(&self) -> LossFamily {
        self.loss
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn block_rows(&self, i: usize) -> Range<usize> {
        self.block_ptr[i]..self.block_ptr[i + 1]
    }

    pub fn target(&self, row: usize) -> f64 {
        self.targets[row]
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gammas[i]
    }

    pub fn smoothness(&self, _i: usize) -> f64 {
        self.loss.smoothness()
    }

    pub fn all_convex(&self) -> bool {
        self.gammas.iter().all(|&g| g == 0.0)
    }

    /// `f_i(A_i x)`.
    pub fn sample_value(&self, i: usize, x: &[f64]) -> Result<f64> {
        let v: f64 = self
            .block_rows(i)
            .map(|r| self.loss.value(self.design.row_dot(r, x), self.targets[r]))
            .sum();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation { sample: i })
        }
    }

    /// `out += scale · A_iᵀ ∇f_i(A_i x)`.
    pub fn add_sample_gradient(&self, i: usize, x: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        for r in self.block_rows(i) {
            let g = self.loss.grad(self.design.row_dot(r, x), self.targets[r]);
            if !g.is_finite() {
                return Err(Error::Evaluation { sample: i });
            }
            self.design.row_axpy(r, scale * g, out);
        }
        Ok(())
    }

    /// `f(x)`.
    pub fn smooth_value(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.n_samples() {
            total += self.sample_value(i, x)?;
        }
        Ok(total / self.n_samples() as f64)
    }

    /// `ψ(x) = f(x) + φ(x)`.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.smooth_value(x)? + self.regularizer.value(x))
    }

    /// `∇f(x)`.
    pub fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut g = vec![0.0; self.dim()];
        let scale = 1.0 / self.n_samples() as f64;
        for i in 0..self.n_samples() {
            self.add_sample_gradient(i, x, scale, &mut g)?;
        }
        Ok(g)
    }

    /// `∇f_S(x) = (1/|S|) Σ_{i∈S} A_iᵀ ∇f_i(A_i x)`; repeated indices
    /// count with multiplicity.
    pub fn batch_gradient(&self, x: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let mut g = vec![0.0; self.dim()];
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            self.add_sample_gradient(i, x, scale, &mut g)?;
        }
        Ok(g)
    }

    /// `M_S x = (1/|S|) Σ_{i∈S} γ_i A_iᵀ A_i x`.
    pub fn weak_metric_apply(&self, batch: &[usize], x: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let mut out = vec![0.0; self.dim()];
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let g = self.gammas[i];
            if g == 0.0 {
                continue;
            }
            for r in self.block_rows(i) {
                let t = self.design.row_dot(r, x);
                self.design.row_axpy(r, scale * g * t, &mut out);
            }
        }
        Ok(out)
    }

    pub fn check_batch(&self, batch: &[usize]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must not be empty"));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::invalid(format!(
                "sample index {i} out of range for N = {}",
                self.n_samples()
            )));
        }
        Ok(())
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has length {}, problem dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point has non-finite entries"));
        }
        Ok(())
    }

    /// Constants together with the theoretical step-size bounds for batch
    /// size `batch`, inner-loop length `inner_len` and `η̄ = eta_bar`.
    pub fn derive_constants(&self, batch: usize, inner_len: usize, eta_bar: f64) -> Result<ConstantsReport> {
        if batch == 0 || inner_len == 0 {
            return Err(Error::invalid("batch size and inner-loop length must be positive"));
        }
        if !(eta_bar > 0.0 && eta_bar < 1.0) {
            return Err(Error::invalid(format!("eta_bar must lie in (0, 1), got {eta_bar}")));
        }
        let c = &self.constants;
        Ok(ConstantsReport {
            constants: c.clone(),
            batch,
            inner_len,
            eta_bar,
            safe_step: safe_step(c.l_smooth, c.l_bar, c.m_bar, eta_bar, inner_len, batch),
            strongly_convex_step: strongly_convex_step(c.l_smooth, c.l_bar, inner_len, batch),
        })
    }
}

/// `α̂ = η̄ / max{2L + M̄, (1 + m/sqrt(2b)) L̄ + max{L, M̄}}`.
pub fn safe_step(l: f64, l_bar: f64, m_bar: f64, eta_bar: f64, inner_len: usize, batch: usize) -> f64 {
    let m = inner_len as f64;
    let b = batch as f64;
    let denom = (2.0 * l + m_bar).max((1.0 + m / (2.0 * b).sqrt()) * l_bar + l.max(m_bar));
    eta_bar / denom
}

/// `[L + sqrt(2/b) · m · L̄]^{-1}`.
pub fn strongly_convex_step(l: f64, l_bar: f64, inner_len: usize, batch: usize) -> f64 {
    1.0 / (l + (2.0 / batch as f64).sqrt() * inner_len as f64 * l_bar)
}

fn compute_constants(design: &Design, block_ptr: &[usize], loss: LossFamily, gammas: &[f64]) -> Result<Constants> {
    let n_samples = block_ptr.len() - 1;
    let li = loss.smoothness();
    let block_norm_sq: Vec<f64> = (0..n_samples)
        .map(|i| design.block_spectral_norm_sq(block_ptr[i]..block_ptr[i + 1]))
        .collect();
    let a_bar = block_norm_sq.iter().copied().fold(0.0, f64::max);
    let l_avg = li * block_norm_sq.iter().sum::<f64>() / n_samples as f64;
    let global = li * design.block_spectral_norm_sq(0..design.nrows()) / n_samples as f64;
    // Power iteration approaches the norm from below.
    let l_smooth = l_avg.min(global * (1.0 + 1e-6));
    let gamma_max = gammas.iter().copied().fold(0.0, f64::max);
    let mut mu_star = f64::INFINITY;
    for &g in gammas {
        let denom = li + g;
        if denom <= 0.0 {
            return Err(Error::invalid("L_i + gamma_i must be positive"));
        }
        mu_star = mu_star.min(1.0 / denom);
    }
    Ok(Constants {
        block_norm_sq,
        l_avg,
        l_smooth,
        l_bar: li * a_bar,
        a_bar,
        m_bar: gamma_max * a_bar,
        mu_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseRows;

    fn dense(rows: &[Vec<f64>]) -> Design {
        Design::Dense(DenseRows::from_rows(rows).unwrap())
    }

    #[test]
    fn logistic_objective_at_origin() {
        let p = Problem::logistic(dense(&[vec![1.0]]), &[1.0], Regularizer::Zero).unwrap();
        assert!((p.objective(&[0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(p.full_gradient(&[0.0]).unwrap(), vec![-0.5]);
    }

    #[test]
    fn squared_objective_and_gradient() {
        let p = Problem::from_rows(dense(&[vec![1.0]]), vec![0.0], LossFamily::Squared, Regularizer::Zero).unwrap();
        assert_eq!(p.objective(&[3.0]).unwrap(), 4.5);
        assert_eq!(p.full_gradient(&[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn batch_gradient_edge_cases() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, -0.7]];
        let p = Problem::logistic(dense(&rows), &[1.0, -1.0, 1.0], Regularizer::Zero).unwrap();
        let x = [0.2, -0.4];
        assert_eq!(p.batch_gradient(&x, &[0, 1, 2]).unwrap(), p.full_gradient(&x).unwrap());
        assert_eq!(
            p.batch_gradient(&x, &[1, 1]).unwrap(),
            p.batch_gradient(&x, &[1]).unwrap()
        );
        assert!(p.batch_gradient(&x, &[]).is_err());
        assert!(p.batch_gradient(&x, &[3]).is_err());
    }

    #[test]
    fn non_finite_point_is_rejected() {
        let p = Problem::from_rows(dense(&[vec![1.0]]), vec![0.0], LossFamily::Squared, Regularizer::Zero).unwrap();
        assert!(p.objective(&[f64::NAN]).is_err());
        assert!(PrimalPoint::new(vec![f64::INFINITY], 1).is_err());
        assert!(PrimalPoint::new(vec![1.0, 2.0], 1).is_err());
    }

    #[test]
    fn evaluation_failure_reports_sample() {
        let p = Problem::from_rows(
            dense(&[vec![1.0], vec![1e200]]),
            vec![0.0, 0.0],
            LossFamily::Squared,
            Regularizer::Zero,
        )
        .unwrap();
        assert!(matches!(p.objective(&[1e200]), Err(Error::Evaluation { sample: 0 })));
    }

    #[test]
    fn safe_step_reference_value() {
        // 0.9 / ((1 + 10/sqrt(8)) + 1)
        let a = safe_step(1.0, 1.0, 0.0, 0.9, 10, 4);
        assert!((a - 0.162_585_94).abs() < 1e-8, "{a}");
    }

    #[test]
    fn constants_for_scaled_identity_block() {
        let design = dense(&[vec![2.0, 0.0], vec![0.0, 2.0]]);
        let p = Problem::new(
            design,
            vec![0, 2],
            vec![0.0, 0.0],
            LossFamily::Squared,
            vec![0.0],
            Regularizer::Zero,
        )
        .unwrap();
        let c = p.constants();
        assert!((c.l_bar - 4.0).abs() < 1e-12);
        assert!((c.a_bar - 4.0).abs() < 1e-12);
        assert_eq!(c.m_bar, 0.0);
        assert_eq!(c.mu_star, 1.0);
    }

    #[test]
    fn rejects_bad_construction() {
        let d = dense(&[vec![1.0]]);
        assert!(Problem::logistic(d.clone(), &[0.0], Regularizer::Zero).is_err());
        assert!(Problem::new(
            d.clone(),
            vec![0, 1],
            vec![0.0],
            LossFamily::StudentT { nu: 1.0 },
            vec![0.2],
            Regularizer::Zero
        )
        .is_err());
        assert!(Problem::new(
            d.clone(),
            vec![0, 1],
            vec![0.0],
            LossFamily::Squared,
            vec![0.0, 0.0],
            Regularizer::Zero
        )
        .is_err());
        assert!(Problem::new(
            d,
            vec![0, 0, 1],
            vec![0.0],
            LossFamily::Squared,
            vec![0.0, 0.0],
            Regularizer::Zero
        )
        .is_err());
    }
}
