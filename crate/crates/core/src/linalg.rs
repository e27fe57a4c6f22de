//! Row-oriented storage for the stacked data matrix and the few dense
//! kernels the solvers need.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Power-iteration stopping tolerance on the relative change of the
/// eigenvalue estimate.
pub const POWER_TOL: f64 = 1e-6;
pub const POWER_MAX_ITER: usize = 2000;
/// Blocks with `rows * cols` at most this size use an exact SVD.
pub const EXACT_SVD_LIMIT: usize = 10_000;

/// Dense matrix stored row-major, so a row is a contiguous slice.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseRows {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseRows {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "dense matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseRows { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(DenseRows {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(rows: usize, cols: usize, indptr: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indptr.len() != rows + 1 || indptr[0] != 0 || indptr[rows] != indices.len() {
            return Err(Error::invalid("malformed CSR row pointer"));
        }
        if indices.len() != values.len() {
            return Err(Error::invalid("CSR indices and values differ in length"));
        }
        for r in 0..rows {
            if indptr[r] > indptr[r + 1] {
                return Err(Error::invalid("CSR row pointer is not monotone"));
            }
            let idx = &indices[indptr[r]..indptr[r + 1]];
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("CSR row {r} has unsorted or duplicate columns")));
            }
            if idx.last().is_some_and(|&c| c >= cols) {
                return Err(Error::invalid(format!("CSR row {r} exceeds {cols} columns")));
            }
        }
        Ok(CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Same entries with `cols >= self.cols` columns.
    pub fn with_cols(&self, cols: usize) -> Result<CsrMatrix> {
        if cols < self.cols {
            return Err(Error::invalid(format!("cannot shrink {} columns to {cols}", self.cols)));
        }
        Ok(CsrMatrix { cols, ..self.clone() })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

/// The stacked matrix of all sample blocks `A_i`.
#[derive(Clone, Debug, PartialEq)]
pub enum Design {
    Dense(DenseRows),
    Sparse(CsrMatrix),
}

impl Design {
    pub fn nrows(&self) -> usize {
        match self {
            Design::Dense(d) => d.rows,
            Design::Sparse(s) => s.rows,
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Design::Dense(d) => d.cols,
            Design::Sparse(s) => s.cols,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Design::Sparse(_))
    }

    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        match self {
            Design::Dense(d) => d.row(r).iter().zip(x).map(|(a, b)| a * b).sum(),
            Design::Sparse(s) => {
                let (idx, val) = s.row(r);
                idx.iter().zip(val).map(|(&j, v)| v * x[j]).sum()
            }
        }
    }

    /// `y += c * a_r`.
    #[inline]
    pub fn row_axpy(&self, r: usize, c: f64, y: &mut [f64]) {
        if c == 0.0 {
            return;
        }
        match self {
            Design::Dense(d) => {
                for (yi, a) in y.iter_mut().zip(d.row(r)) {
                    *yi += c * a;
                }
            }
            Design::Sparse(s) => {
                let (idx, val) = s.row(r);
                for (&j, v) in idx.iter().zip(val) {
                    y[j] += c * v;
                }
            }
        }
    }

    /// `sum_j a_rj * w_j * a_sj`.
    pub fn row_weighted_dot(&self, r: usize, s_row: usize, w: &[f64]) -> f64 {
        match self {
            Design::Dense(d) => d
                .row(r)
                .iter()
                .zip(d.row(s_row))
                .zip(w)
                .map(|((a, b), wj)| a * wj * b)
                .sum(),
            Design::Sparse(m) => {
                let (ia, va) = m.row(r);
                let (ib, vb) = m.row(s_row);
                let (mut p, mut q, mut acc) = (0, 0, 0.0);
                while p < ia.len() && q < ib.len() {
                    match ia[p].cmp(&ib[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            acc += va[p] * w[ia[p]] * vb[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                acc
            }
        }
    }

    pub fn row_norm_sq(&self, r: usize) -> f64 {
        match self {
            Design::Dense(d) => d.row(r).iter().map(|a| a * a).sum(),
            Design::Sparse(s) => s.row(r).1.iter().map(|a| a * a).sum(),
        }
    }

    /// Visits the stored entries of row `r` in column order.
    pub fn for_each_in_row(&self, r: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            Design::Dense(d) => d.row(r).iter().enumerate().for_each(|(j, &v)| f(j, v)),
            Design::Sparse(s) => {
                let (idx, val) = s.row(r);
                idx.iter().zip(val).for_each(|(&j, &v)| f(j, v));
            }
        }
    }

    pub fn scale_row(&mut self, r: usize, c: f64) {
        match self {
            Design::Dense(d) => d.row_mut(r).iter_mut().for_each(|v| *v *= c),
            Design::Sparse(s) => {
                let span = s.indptr[r]..s.indptr[r + 1];
                s.values[span].iter_mut().for_each(|v| *v *= c);
            }
        }
    }

    /// New matrix made of the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Design {
        match self {
            Design::Dense(d) => {
                let mut data = Vec::with_capacity(rows.len() * d.cols);
                for &r in rows {
                    data.extend_from_slice(d.row(r));
                }
                Design::Dense(DenseRows {
                    rows: rows.len(),
                    cols: d.cols,
                    data,
                })
            }
            Design::Sparse(s) => {
                let mut indptr = vec![0];
                let mut indices = Vec::new();
                let mut values = Vec::new();
                for &r in rows {
                    let (idx, val) = s.row(r);
                    indices.extend_from_slice(idx);
                    values.extend_from_slice(val);
                    indptr.push(indices.len());
                }
                Design::Sparse(CsrMatrix {
                    rows: rows.len(),
                    cols: s.cols,
                    indptr,
                    indices,
                    values,
                })
            }
        }
    }

    pub fn rows_to_dense(&self, rows: Range<usize>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), self.ncols());
        for (i, r) in rows.enumerate() {
            self.for_each_in_row(r, |j, v| m[(i, j)] = v);
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.rows_to_dense(0..self.nrows())
    }

    /// `A x` over the rows in `rows`.
    pub fn block_matvec(&self, rows: Range<usize>, x: &[f64]) -> Vec<f64> {
        rows.map(|r| self.row_dot(r, x)).collect()
    }

    /// Largest squared singular value of the block made of `rows`.
    ///
    /// Single rows are exact; small blocks use a dense SVD; everything
    /// else runs power iteration on `B^T B`.
    pub fn block_spectral_norm_sq(&self, rows: Range<usize>) -> f64 {
        match rows.len() {
            0 => 0.0,
            1 => self.row_norm_sq(rows.start),
            m if m * self.ncols() <= EXACT_SVD_LIMIT => {
                let dense = self.rows_to_dense(rows);
                let s = dense.singular_values().max();
                s * s
            }
            _ => self.power_iteration(rows),
        }
    }

    fn power_iteration(&self, rows: Range<usize>) -> f64 {
        let n = self.ncols();
        // Deterministic start with no special alignment to the axes.
        let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * ((j as f64) * 0.7).sin()).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITER {
            let mut w = vec![0.0; n];
            for r in rows.clone() {
                let t = self.row_dot(r, &v);
                self.row_axpy(r, t, &mut w);
            }
            lambda = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            // Eigen-residual ||B^T B v - λ v||; the eigenvalue error is
            // of the order of its square.
            let res = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = normalize(&mut w);
            if norm == 0.0 {
                return 0.0;
            }
            v = w;
            if res <= POWER_TOL * lambda.abs() {
                break;
            }
        }
        lambda
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    norm
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Conjugate gradients for an SPD operator given as a closure.
///
/// Stops once `||A x - rhs|| <= tol`; returns `None` if `max_iter` runs out.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, usize)> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= tol {
        return Some((x, 0));
    }
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return None;
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= tol {
            return Some((x, it));
        }
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_dense() -> Design {
        Design::Dense(DenseRows::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, -3.0, 1.0]]).unwrap())
    }

    fn sample_sparse() -> Design {
        Design::Sparse(CsrMatrix::new(2, 3, vec![0, 2, 4], vec![0, 2, 1, 2], vec![1.0, 2.0, -3.0, 1.0]).unwrap())
    }

    #[test]
    fn dense_and_sparse_agree() {
        let (d, s) = (sample_dense(), sample_sparse());
        let x = [0.5, 1.5, -2.0];
        for r in 0..2 {
            assert_eq!(d.row_dot(r, &x), s.row_dot(r, &x));
            assert_eq!(d.row_norm_sq(r), s.row_norm_sq(r));
            let w = [1.0, 2.0, 3.0];
            assert_eq!(d.row_weighted_dot(r, 1, &w), s.row_weighted_dot(r, 1, &w));
        }
        assert_eq!(d.to_dense(), s.to_dense());
    }

    #[test]
    fn csr_rejects_unsorted_columns() {
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![2, 0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn power_iteration_matches_svd() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| (0..60).map(|j| ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.4).collect())
            .collect();
        let d = Design::Dense(DenseRows::from_rows(&rows).unwrap());
        let exact = d.to_dense().singular_values().max().powi(2);
        let est = d.power_iteration(0..200);
        assert!((est - exact).abs() / exact < 1e-6, "{est} vs {exact}");
        assert!((d.block_spectral_norm_sq(0..200) - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let apply = |v: &[f64]| vec![a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]];
        let (x, _) = conjugate_gradient(apply, &[1.0, 2.0], 1e-12, 10).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-10);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-10);
    }
}
