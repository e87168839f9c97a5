//! Dense vector helpers, the CSR system matrix, spectral-norm estimation and a
//! dense singular-value oracle for small problems.
//!
//! Everything downstream talks to the system matrix through [`LinearOperator`],
//! which only exposes forward and adjoint application. [`SparseOperator`] is
//! the concrete CSR implementation used for CT matrices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

/// Default cap on `min(m, n)` for [`svd_spectrum`].
pub const ORACLE_CAP: usize = 2000;

/// Default power-iteration count for [`estimate_spectral_norm`].
pub const POWER_ITERS: usize = 100;

/// Default seed for the power-iteration start vector.
pub const POWER_SEED: u64 = 0x5eed;

/// Row blocks used by the deterministic parallel adjoint.
const ADJOINT_BLOCKS: usize = 8;

/// Below this many nonzeros the operator is applied sequentially.
const PAR_THRESHOLD: usize = 200_000;

const BINARY_MAGIC: &[u8; 8] = b"SPMCSR01";

#[derive(Debug, Error)]
pub enum LinopError {
    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid sparse layout: {0}")]
    InvalidLayout(String),
    #[error("operator is {rows}x{cols}; the SVD oracle is capped at min(m, n) <= {cap}")]
    TooLargeForOracle { rows: usize, cols: usize, cap: usize },
    #[error("eigenvalue solver failed: {0}")]
    Eigen(String),
    #[error("malformed matrix file: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Dense vector helpers
// ---------------------------------------------------------------------------

/// Inner product, summed left to right.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `‖a − b‖₂`
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_len(expected: usize, actual: usize) -> Result<(), LinopError> {
    if expected == actual {
        Ok(())
    } else {
        Err(LinopError::DimensionMismatch { expected, actual })
    }
}

// ---------------------------------------------------------------------------
// Operator abstraction
// ---------------------------------------------------------------------------

/// A matrix-free linear map `A: R^n -> R^m` with its adjoint.
///
/// The `_into` methods assume correctly sized buffers; the checked wrappers
/// validate lengths first.
pub trait LinearOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `y = A x`
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// `x = Aᵀ y`
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>, LinopError> {
        check_len(self.cols(), x.len())?;
        let mut y = vec![0.0; self.rows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>, LinopError> {
        check_len(self.rows(), y.len())?;
        let mut x = vec![0.0; self.cols()];
        self.apply_adjoint_into(y, &mut x);
        Ok(x)
    }

    /// Row sums `A·1`.
    fn row_sums(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.rows()];
        self.apply_into(&vec![1.0; self.cols()], &mut y);
        y
    }

    /// Column sums `Aᵀ·1`.
    fn col_sums(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.cols()];
        self.apply_adjoint_into(&vec![1.0; self.rows()], &mut x);
        x
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        (**self).apply_adjoint_into(y, x)
    }
}

// ---------------------------------------------------------------------------
// CSR operator
// ---------------------------------------------------------------------------

/// Compressed sparse row matrix.
///
/// The adjoint is applied by a transposed traversal of the same storage.
/// When `deterministic` is set (the default) the parallel adjoint splits rows
/// into a fixed number of blocks and reduces them in block order, so results
/// do not depend on the thread count.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    deterministic: bool,
}

impl SparseOperator {
    /// Builds an operator from raw CSR arrays, validating the layout.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinopError> {
        if row_offsets.len() != rows + 1 {
            return Err(LinopError::InvalidLayout(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[rows] != col_indices.len() {
            return Err(LinopError::InvalidLayout(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(LinopError::InvalidLayout("row_offsets not monotone".into()));
        }
        if col_indices.len() != values.len() {
            return Err(LinopError::InvalidLayout(
                "col_indices and values differ in length".into(),
            ));
        }
        if let Some(&j) = col_indices.iter().find(|&&j| j >= cols) {
            return Err(LinopError::InvalidLayout(format!(
                "column index {j} out of range for {cols} columns"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LinopError::InvalidLayout("non-finite entry".into()));
        }
        Ok(SparseOperator {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
            deterministic: true,
        })
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, LinopError> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for (i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(LinopError::InvalidLayout(format!(
                    "entry ({i}, {j}) outside {rows}x{cols}"
                )));
            }
            per_row[i].push((j, v));
        }
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for mut row in per_row {
            row.sort_by_key(|&(j, _)| j);
            let mut iter = row.into_iter().peekable();
            while let Some((j, mut v)) = iter.next() {
                while let Some(&(j2, v2)) = iter.peek() {
                    if j2 != j {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self::from_csr(rows, cols, row_offsets, col_indices, values)
    }

    /// Builds from dense row-major rows.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self, LinopError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(LinopError::InvalidLayout("ragged dense rows".into()));
        }
        Self::from_triplets(
            m,
            n,
            rows.iter().enumerate().flat_map(|(i, r)| {
                r.iter().enumerate().map(move |(j, &v)| (i, j, v))
            }),
        )
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self::from_triplets(n, n, d.iter().enumerate().map(|(i, &v)| (i, i, v)))
            .expect("diagonal layout is valid")
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn set_deterministic(&mut self, on: bool) {
        self.deterministic = on;
    }

    /// `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Returns a copy scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&j, &v)| v * x[j])
            .sum()
    }

    fn scatter_rows(&self, rows: std::ops::Range<usize>, y: &[f64], x: &mut [f64]) {
        for i in rows {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            for (&j, &v) in self.col_indices[lo..hi].iter().zip(&self.values[lo..hi]) {
                x[j] += v * yi;
            }
        }
    }

    /// Removes rows with no nonzero entries, keeping order.
    pub fn remove_zero_rows(&self, b: &[f64]) -> Result<ZeroRowFilter, LinopError> {
        check_len(self.rows, b.len())?;
        let kept: Vec<usize> = (0..self.rows)
            .filter(|&i| self.row(i).any(|(_, v)| v != 0.0))
            .collect();
        let mut row_offsets = Vec::with_capacity(kept.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &i in &kept {
            for (j, v) in self.row(i) {
                col_indices.push(j);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        let mut operator =
            SparseOperator::from_csr(kept.len(), self.cols, row_offsets, col_indices, values)?;
        operator.deterministic = self.deterministic;
        let rhs = kept.iter().map(|&i| b[i]).collect();
        Ok(ZeroRowFilter {
            empty: kept.is_empty(),
            operator,
            rhs,
            kept,
        })
    }

    /// Text dump: header `m n nnz`, then one `i j value` line per entry.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), LinopError> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                writeln!(w, "{i} {j} {v:e}")?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, LinopError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| LinopError::Parse("missing header".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| LinopError::Parse(format!("header: {e}")))?;
        let [m, n, nnz] = dims[..] else {
            return Err(LinopError::Parse("header must be `m n nnz`".into()));
        };
        let mut triplets = Vec::with_capacity(nnz);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let bad = || LinopError::Parse(format!("line {}: `{line}`", lineno + 2));
            let i: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let j: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let v: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            triplets.push((i, j, v));
        }
        if triplets.len() != nnz {
            return Err(LinopError::Parse(format!(
                "header promised {nnz} entries, found {}",
                triplets.len()
            )));
        }
        Self::from_triplets(m, n, triplets)
    }

    /// Binary dump: 8-byte magic, `m n nnz` as little-endian u64, then
    /// `nnz` records of (u64 row, u64 col, f64 value), all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), LinopError> {
        w.write_all(BINARY_MAGIC)?;
        for d in [self.rows, self.cols, self.nnz()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                w.write_all(&(i as u64).to_le_bytes())?;
                w.write_all(&(j as u64).to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, LinopError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(LinopError::Parse("bad magic".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8], LinopError> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let nnz = u64::from_le_bytes(next(&mut r)?) as usize;
        let mut triplets = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let i = u64::from_le_bytes(next(&mut r)?) as usize;
            let j = u64::from_le_bytes(next(&mut r)?) as usize;
            let v = f64::from_le_bytes(next(&mut r)?);
            triplets.push((i, j, v));
        }
        Self::from_triplets(m, n, triplets)
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<(), LinopError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self, LinopError> {
        Self::read_text(BufReader::new(File::open(path)?))
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<(), LinopError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self, LinopError> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }
}

impl LinearOperator for SparseOperator {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        if self.nnz() >= PAR_THRESHOLD {
            y.par_iter_mut()
                .enumerate()
                .with_min_len(256)
                .for_each(|(i, yi)| *yi = self.row_dot(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, x);
            }
        }
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        x.iter_mut().for_each(|v| *v = 0.0);
        let threads = rayon::current_num_threads();
        if self.nnz() < PAR_THRESHOLD || (threads == 1 && self.deterministic) {
            self.scatter_rows(0..self.rows, y, x);
            return;
        }
        let blocks = if self.deterministic {
            ADJOINT_BLOCKS
        } else {
            threads.max(1)
        };
        let chunk = self.rows.div_ceil(blocks);
        let partials: Vec<Vec<f64>> = (0..blocks)
            .into_par_iter()
            .map(|blk| {
                let lo = (blk * chunk).min(self.rows);
                let hi = ((blk + 1) * chunk).min(self.rows);
                let mut part = vec![0.0; self.cols];
                self.scatter_rows(lo..hi, y, &mut part);
                part
            })
            .collect();
        for part in &partials {
            for (xi, pi) in x.iter_mut().zip(part) {
                *xi += pi;
            }
        }
    }
}

/// Result of [`SparseOperator::remove_zero_rows`].
#[derive(Debug, Clone)]
pub struct ZeroRowFilter {
    pub operator: SparseOperator,
    pub rhs: Vec<f64>,
    /// Original indices of the surviving rows.
    pub kept: Vec<usize>,
    /// Set when every row was zero.
    pub empty: bool,
}

// ---------------------------------------------------------------------------
// Spectral norm and singular values
// ---------------------------------------------------------------------------

/// Largest-singular-value estimate from power iteration on `AᵀA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    /// Set when `AᵀA v` vanished, i.e. the operator is (numerically) zero.
    pub zero_operator: bool,
}

/// Power iteration on `AᵀA` from a seeded Gaussian start vector.
///
/// Returns the square root of the final Rayleigh quotient, which never
/// exceeds `σ₁` and does not decrease with more iterations.
pub fn estimate_spectral_norm<A: LinearOperator + ?Sized>(
    a: &A,
    iters: usize,
    seed: u64,
) -> SpectralEstimate {
    assert!(iters >= 1, "power iteration needs at least one step");
    let n = a.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut av = vec![0.0; a.rows()];
    let mut w = vec![0.0; n];
    let mut rayleigh = 0.0;
    for _ in 0..iters {
        a.apply_into(&v, &mut av);
        a.apply_adjoint_into(&av, &mut w);
        // vᵀAᵀAv = ‖Av‖²
        rayleigh = dot(&av, &av);
        let nw = norm2(&w);
        if nw == 0.0 || !nw.is_finite() {
            return SpectralEstimate {
                sigma: 0.0,
                zero_operator: true,
            };
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
    }
    SpectralEstimate {
        sigma: rayleigh.sqrt(),
        zero_operator: false,
    }
}

/// Singular values in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    singular_values: Vec<f64>,
}

impl Spectrum {
    pub fn new(mut singular_values: Vec<f64>) -> Self {
        singular_values.sort_by(|a, b| b.total_cmp(a));
        Spectrum { singular_values }
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Numerical rank with the usual `max(m, n)·ε·σ₁` cutoff.
    pub fn rank(&self, m: usize, n: usize) -> usize {
        let tol = m.max(n) as f64 * f64::EPSILON * self.max();
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// Full singular-value set of the densified operator, with the default cap.
pub fn svd_spectrum(a: &SparseOperator) -> Result<Spectrum, LinopError> {
    svd_spectrum_capped(a, ORACLE_CAP)
}

/// Full singular-value set via the symmetric eigenvalues of the smaller Gram
/// matrix (`AᵀA` or `AAᵀ`).
pub fn svd_spectrum_capped(a: &SparseOperator, cap: usize) -> Result<Spectrum, LinopError> {
    let (m, n) = (a.rows(), a.cols());
    if m.min(n) > cap {
        return Err(LinopError::TooLargeForOracle { rows: m, cols: n, cap });
    }
    let k = m.min(n);
    let mut gram = faer::Mat::<f64>::zeros(k, k);
    if n <= m {
        // AᵀA = Σ_i rowᵢᵀ rowᵢ
        for i in 0..m {
            let row: Vec<(usize, f64)> = a.row(i).collect();
            for &(j1, v1) in &row {
                for &(j2, v2) in &row {
                    gram[(j1, j2)] += v1 * v2;
                }
            }
        }
    } else {
        let rows: Vec<Vec<(usize, f64)>> = (0..m).map(|i| a.row(i).collect()).collect();
        let mut dense_row = vec![0.0; n];
        for i in 0..m {
            for &(j, v) in &rows[i] {
                dense_row[j] = v;
            }
            for (l, other) in rows.iter().enumerate().skip(i) {
                let s: f64 = other.iter().map(|&(j, v)| v * dense_row[j]).sum();
                gram[(i, l)] = s;
                gram[(l, i)] = s;
            }
            for &(j, _) in &rows[i] {
                dense_row[j] = 0.0;
            }
        }
    }
    let eig = gram
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| LinopError::Eigen(format!("{e:?}")))?;
    Ok(Spectrum::new(eig.iter().map(|&l| l.max(0.0).sqrt()).collect()))
}
