//! Dataset loading (LIBSVM-style sparse text, delimited numeric text),
//! seeded splits and the synthetic Student-t regression generator.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseRows, Design};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub split_seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Design,
    pub targets: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: Design, targets: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("targets must be finite"));
        }
        Ok(Dataset {
            features,
            targets,
            meta: DatasetMeta {
                source: source.into(),
                split_seed: None,
            },
        })
    }

    pub fn n_samples(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Copy with `dim` columns (sparse data only grows; used to align a
    /// test file with fewer trailing features than the training file).
    pub fn with_dim(&self, dim: usize) -> Result<Dataset> {
        match &self.features {
            Design::Sparse(m) => Ok(Dataset {
                features: Design::Sparse(m.with_cols(dim)?),
                targets: self.targets.clone(),
                meta: self.meta.clone(),
            }),
            _ if dim == self.dim() => Ok(self.clone()),
            _ => Err(Error::invalid(format!("cannot resize {} columns to {dim}", self.dim()))),
        }
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `<label> <idx>:<val> ...` lines with 1-based ascending indices.
/// Labels drawn from `{-1, 0, 1}` are normalized to `±1` with `0 → -1`.
pub fn load_sparse_text(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    parse_sparse_text(reader, path)
}

pub fn parse_sparse_text(reader: impl BufRead, path: &Path) -> Result<Dataset> {
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut cols = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("bad label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(parse_error(path, lineno, "label is not finite"));
        }
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_error(path, lineno, format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad index in {tok:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad value in {tok:?}")))?;
            if idx == 0 {
                return Err(parse_error(path, lineno, "indices are 1-based"));
            }
            if idx <= prev {
                return Err(parse_error(path, lineno, format!("index {idx} out of order")));
            }
            if !val.is_finite() {
                return Err(parse_error(path, lineno, format!("value in {tok:?} is not finite")));
            }
            prev = idx;
            cols = cols.max(idx);
            indices.push(idx - 1);
            values.push(val);
        }
        labels.push(label);
        indptr.push(indices.len());
    }
    if labels.is_empty() {
        return Err(parse_error(path, 0, "file contains no samples"));
    }
    normalize_labels(&mut labels);
    let csr = CsrMatrix::new(labels.len(), cols, indptr, indices, values)?;
    Dataset::new(Design::Sparse(csr), labels, path.display().to_string())
}

/// Maps `{0, 1}` (or `{-1, 0, 1}`) labels onto `{-1, +1}`.
pub fn normalize_labels(labels: &mut [f64]) {
    if labels.iter().all(|&l| l == 0.0 || l == 1.0 || l == -1.0) {
        for l in labels.iter_mut() {
            if *l == 0.0 {
                *l = -1.0;
            }
        }
    }
}

/// Writes the sparse text format; values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_sparse_text(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..ds.n_samples() {
        write!(w, "{}", ds.targets[r])?;
        let mut err = Ok(());
        ds.features.for_each_in_row(r, |j, v| {
            if v != 0.0 && err.is_ok() {
                err = write!(w, " {}:{}", j + 1, v);
            }
        });
        err?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a comma- or tab-separated numeric table; a first line containing a
/// non-numeric cell is taken as a header.
pub fn load_delimited(path: &Path, target_column: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows: Vec<f64> = Vec::new();
    let mut targets = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let lineno = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(|c| c.parse::<f64>()).collect();
        let cells = match parsed {
            Ok(cells) => cells,
            Err(_) if width.is_none() && targets.is_empty() => {
                // Header line.
                width = Some(record.len());
                continue;
            }
            Err(_) => return Err(parse_error(path, lineno, "non-numeric cell")),
        };
        match width {
            Some(w) if w != cells.len() => {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("expected {w} columns, found {}", cells.len()),
                ))
            }
            _ => width = Some(cells.len()),
        }
        if target_column >= cells.len() {
            return Err(parse_error(path, lineno, format!("no column {target_column}")));
        }
        if cells.iter().any(|c| !c.is_finite()) {
            return Err(parse_error(path, lineno, "non-finite cell"));
        }
        for (j, v) in cells.iter().enumerate() {
            if j == target_column {
                targets.push(*v);
            } else {
                rows.push(*v);
            }
        }
    }
    if targets.is_empty() {
        return Err(parse_error(path, 0, "file contains no samples"));
    }
    let cols = width.unwrap_or(1) - 1;
    let dense = DenseRows::new(targets.len(), cols, rows)?;
    Dataset::new(Design::Dense(dense), targets, path.display().to_string())
}

/// Seeded shuffle split into `(train, validation)` row indices.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * n as f64).round() as usize).min(n);
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(ds.n_samples(), fraction, seed)?;
    let mut a = ds.select(&train);
    let mut b = ds.select(&val);
    a.meta.split_seed = Some(seed);
    b.meta.split_seed = Some(seed);
    Ok((a, b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub n_samples: usize,
    pub nnz: usize,
    pub noise_scale: f64,
    /// Degrees of freedom of the noise.
    pub noise_nu: f64,
    pub sv_range: [f64; 2],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 5000,
            n_samples: 4000,
            nnz: 20,
            noise_scale: 0.1,
            noise_nu: 1.0,
            sv_range: [1.0, 15.0],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.sv_range;
        if self.n == 0 || self.n_samples == 0 {
            return Err(Error::invalid("synthetic problem needs positive sizes"));
        }
        if self.nnz > self.n {
            return Err(Error::invalid(format!("nnz = {} exceeds n = {}", self.nnz, self.n)));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "singular value range must satisfy 0 < lo <= hi, got {lo}, {hi}"
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_nu > 0.0) {
            return Err(Error::invalid("noise scale must be >= 0 and degrees of freedom > 0"));
        }
        Ok(())
    }
}

/// Student-t draw; Cauchy by inverse CDF when `ν = 1`.
fn student_t_noise(rng: &mut ChaCha8Rng, nu: f64) -> Result<f64> {
    if nu == 1.0 {
        let u: f64 = rng.random();
        Ok((std::f64::consts::PI * (u - 0.5)).tan())
    } else {
        let dist = StudentT::new(nu).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(dist.sample(rng))
    }
}

/// Sparse regression instance `b = A x̂ + noise · ε̄` with heavy-tailed
/// noise and the singular values of `A` affinely rescaled into `sv_range`.
/// Returns the dataset and `x̂`.
pub fn synth_student_t(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (spec.n_samples, spec.n);
    let raw = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0));
    let svd = raw.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let sigma = svd.singular_values;
    let [lo, hi] = spec.sv_range;
    let smax = sigma.max();
    let active: Vec<f64> = sigma.iter().copied().filter(|&s| s > 1e-12 * smax).collect();
    let smin = active.iter().copied().fold(f64::INFINITY, f64::min);
    let rescaled = sigma.map(|s| {
        if s <= 1e-12 * smax {
            0.0
        } else if smax > smin {
            lo + (s - smin) / (smax - smin) * (hi - lo)
        } else {
            hi
        }
    });
    let a = &u * DMatrix::from_diagonal(&rescaled) * &vt;

    let mut x_hat = vec![0.0; cols];
    for j in index::sample(&mut rng, cols, spec.nnz) {
        x_hat[j] = StandardNormal.sample(&mut rng);
    }
    let mut targets = Vec::with_capacity(rows);
    for r in 0..rows {
        let clean: f64 = (0..cols).map(|j| a[(r, j)] * x_hat[j]).sum();
        let eps = student_t_noise(&mut rng, spec.noise_nu)?;
        targets.push(clean + spec.noise_scale * eps);
    }
    let data: Vec<f64> = (0..rows)
        .flat_map(|r| (0..cols).map(move |j| (r, j)))
        .map(|(r, j)| a[(r, j)])
        .collect();
    let features = Design::Dense(DenseRows::new(rows, cols, data)?);
    let ds = Dataset::new(features, targets, "synthetic_student_t")?;
    Ok((ds, x_hat))
}
