//! Compressed sparse row matrices and the linear solvers used by the
//! finite element time stepper.
//!
//! The direct path is a banded LU without pivoting. Uniform interval and
//! square meshes numbered row by row give bandwidth `nx + 2`, so a single
//! factorization is reused for every implicit step. Jacobi-preconditioned
//! CG and BiCGStab are available for callers that prefer iterative solves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    #[default]
    DirectLu,
    Cg,
    BiCgStab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: SolveMethod,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: SolveMethod::DirectLu,
            rel_tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl SolveOptions {
    pub fn with_method(method: SolveMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Builds a canonical CSR matrix, summing duplicate `(row, col)` entries.
pub fn csr_from_triplets(
    entries: &[(usize, usize, f64)],
    n_rows: usize,
    n_cols: usize,
) -> Result<CsrMatrix> {
    let mut counts = vec![0usize; n_rows + 1];
    for &(r, c, _) in entries {
        if r >= n_rows || c >= n_cols {
            return Err(Error::Construction(format!(
                "entry ({r}, {c}) out of range for {n_rows}x{n_cols} matrix"
            )));
        }
        counts[r + 1] += 1;
    }
    for i in 0..n_rows {
        counts[i + 1] += counts[i];
    }
    let mut cursor = counts.clone();
    let mut cols = vec![0usize; entries.len()];
    let mut vals = vec![0.0; entries.len()];
    for &(r, c, v) in entries {
        let slot = cursor[r];
        cols[slot] = c;
        vals[slot] = v;
        cursor[r] += 1;
    }

    let mut row_offsets = Vec::with_capacity(n_rows + 1);
    let mut col_indices = Vec::with_capacity(entries.len());
    let mut values = Vec::with_capacity(entries.len());
    row_offsets.push(0);
    let mut row_buf: Vec<(usize, f64)> = Vec::new();
    for r in 0..n_rows {
        row_buf.clear();
        row_buf.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
        row_buf.sort_by_key(|&(c, _)| c);
        for &(c, v) in &row_buf {
            match col_indices.last() {
                Some(&last) if last == c && col_indices.len() > row_offsets[r] => {
                    *values.last_mut().unwrap() += v;
                }
                _ => {
                    col_indices.push(c);
                    values.push(v);
                }
            }
        }
        row_offsets.push(col_indices.len());
    }
    Ok(CsrMatrix {
        n_rows,
        n_cols,
        row_offsets,
        col_indices,
        values,
    })
}

/// Matrix-vector product.
pub fn spmv(m: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.n_cols {
        return Err(Error::DimensionMismatch {
            expected: m.n_cols,
            found: x.len(),
        });
    }
    let mut y = vec![0.0; m.n_rows];
    m.mul_into(x, &mut y);
    Ok(y)
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::identity(diag.len());
        m.values.copy_from_slice(diag);
        m
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = self * x` without allocation. Lengths are the caller's responsibility.
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let entries: Vec<_> = (0..self.n_rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        csr_from_triplets(&entries, self.n_cols, self.n_rows)
            .expect("transpose indices are in range")
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha * self + beta * other`.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Result<CsrMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows * self.n_cols,
                found: other.n_rows * other.n_cols,
            });
        }
        let mut entries = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n_rows {
            entries.extend(self.row(i).map(|(j, v)| (i, j, alpha * v)));
            entries.extend(other.row(i).map(|(j, v)| (i, j, beta * v)));
        }
        csr_from_triplets(&entries, self.n_rows, self.n_cols)
    }

    /// Symmetric quadratic form `x^T self y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n_rows)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    fn bandwidths(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for i in 0..self.n_rows {
            for (j, _) in self.row(i) {
                if j < i {
                    lower = lower.max(i - j);
                } else {
                    upper = upper.max(j - i);
                }
            }
        }
        (lower, upper)
    }
}

/// Dense band storage of an LU factorization without pivoting.
#[derive(Debug, Clone)]
struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    band: Vec<f64>,
}

impl BandedLu {
    fn factor(m: &CsrMatrix) -> Result<Self> {
        let n = m.n_rows;
        let (lower, upper) = m.bandwidths();
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        let mut scale = vec![0.0f64; n];
        for i in 0..n {
            for (j, v) in m.row(i) {
                band[i * width + (j + lower - i)] = v;
                scale[i] = scale[i].max(v.abs());
            }
        }
        for k in 0..n {
            let pivot = band[k * width + lower];
            if !(pivot.abs() > 1e-14 * scale[k].max(f64::MIN_POSITIVE)) {
                return Err(Error::Factorization(format!(
                    "zero pivot at row {k} (|pivot| = {:.3e})",
                    pivot.abs()
                )));
            }
            let j_end = (k + upper + 1).min(n);
            let i_end = (k + lower + 1).min(n);
            for i in (k + 1)..i_end {
                let ik = i * width + (k + lower - i);
                let l = band[ik] / pivot;
                band[ik] = l;
                if l == 0.0 {
                    continue;
                }
                let row_k = k * width + lower - k;
                let row_i = i * width + lower - i;
                for j in (k + 1)..j_end {
                    band[row_i + j] -= l * band[row_k + j];
                }
            }
        }
        Ok(Self {
            n,
            lower,
            upper,
            band,
        })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let w = self.lower + self.upper + 1;
        for i in 0..self.n {
            let start = i.saturating_sub(self.lower);
            let base = i * w + self.lower - i;
            let mut acc = x[i];
            for j in start..i {
                acc -= self.band[base + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..self.n).rev() {
            let end = (i + self.upper + 1).min(self.n);
            let base = i * w + self.lower - i;
            let mut acc = x[i];
            for j in (i + 1)..end {
                acc -= self.band[base + j] * x[j];
            }
            x[i] = acc / self.band[base + i];
        }
    }
}

/// A prepared solver for repeated right-hand sides against the same matrix.
#[derive(Debug, Clone)]
pub struct LinearSolver {
    matrix: CsrMatrix,
    opts: SolveOptions,
    lu: Option<BandedLu>,
    inv_diag: Vec<f64>,
}

impl LinearSolver {
    pub fn new(matrix: CsrMatrix, opts: SolveOptions) -> Result<Self> {
        opts.validate()?;
        if matrix.n_rows != matrix.n_cols {
            return Err(Error::DimensionMismatch {
                expected: matrix.n_rows,
                found: matrix.n_cols,
            });
        }
        let lu = match opts.method {
            SolveMethod::DirectLu => Some(BandedLu::factor(&matrix)?),
            _ => None,
        };
        let inv_diag = matrix
            .diagonal()
            .iter()
            .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Ok(Self {
            matrix,
            opts,
            lu,
            inv_diag,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn options(&self) -> &SolveOptions {
        &self.opts
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_with_guess(b, None)
    }

    /// Iterative methods start from `guess` when given; the direct path ignores it.
    pub fn solve_with_guess(&self, b: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.matrix.n_rows;
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        match self.opts.method {
            SolveMethod::DirectLu => {
                let mut x = b.to_vec();
                self.lu.as_ref().expect("factored").solve_in_place(&mut x);
                Ok(x)
            }
            SolveMethod::Cg => self.cg(b, guess),
            SolveMethod::BiCgStab => self.bicgstab(b, guess),
        }
    }

    fn cg(&self, b: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = b.len();
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let tol = self.opts.rel_tol * b_norm;
        let mut x = guess.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut r = vec![0.0; n];
        self.matrix.mul_into(&x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let mut res = norm(&r);
        for _ in 0..self.opts.max_iter {
            if res <= tol {
                return Ok(x);
            }
            self.matrix.mul_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::NotConverged {
                    iterations: 0,
                    residual: res / b_norm,
                });
            }
            let alpha = rz / pap;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            res = norm(&r);
            z.iter_mut()
                .zip(r.iter().zip(&self.inv_diag))
                .for_each(|(zi, (ri, di))| *zi = ri * di);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        if res <= tol {
            return Ok(x);
        }
        Err(Error::NotConverged {
            iterations: self.opts.max_iter,
            residual: res / b_norm,
        })
    }

    fn bicgstab(&self, b: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = b.len();
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let tol = self.opts.rel_tol * b_norm;
        let mut x = guess.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut r = vec![0.0; n];
        self.matrix.mul_into(&x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut zs = vec![0.0; n];
        let mut t = vec![0.0; n];
        let mut res = norm(&r);
        for it in 0..self.opts.max_iter {
            if res <= tol {
                return Ok(x);
            }
            let rho_new = dot(&r_hat, &r);
            if rho_new == 0.0 || omega == 0.0 {
                return Err(Error::NotConverged {
                    iterations: it,
                    residual: res / b_norm,
                });
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
                y[i] = p[i] * self.inv_diag[i];
            }
            self.matrix.mul_into(&y, &mut v);
            alpha = rho / dot(&r_hat, &v);
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) <= tol {
                axpy(alpha, &y, &mut x);
                return Ok(x);
            }
            for i in 0..n {
                zs[i] = s[i] * self.inv_diag[i];
            }
            self.matrix.mul_into(&zs, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * y[i] + omega * zs[i];
                r[i] = s[i] - omega * t[i];
            }
            res = norm(&r);
        }
        if res <= tol {
            return Ok(x);
        }
        Err(Error::NotConverged {
            iterations: self.opts.max_iter,
            residual: res / b_norm,
        })
    }
}

/// One-shot solve; prefer [`LinearSolver`] when the matrix is reused.
pub fn solve_linear(m: &CsrMatrix, b: &[f64], opts: &SolveOptions) -> Result<Vec<f64>> {
    LinearSolver::new(m.clone(), *opts)?.solve(b)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}
