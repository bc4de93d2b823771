//! Dense real-matrix kernel: multiplication, LU inversion, Cholesky,
//! cyclic Jacobi eigendecomposition, spectral radius by repeated squaring,
//! and the Kronecker product. All arithmetic is in `f64`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Relative pivot threshold below which a matrix is declared singular.
pub const SINGULARITY_RTOL: f64 = 1e-12;

/// Relative asymmetry tolerated by the symmetric kernels.
pub const SYMMETRY_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular to working precision at pivot {index}")]
    Singular { index: usize },
    #[error("not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("eigenvalue iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major matrix of `f64`. Zero-dimensional matrices are allowed
/// so that degenerate block layouts (p = 0 or q = 0) stay total.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build a matrix from row-major data, rejecting shape mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "expected {}x{}={} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(LinalgError::NonFinite {
                    row: i / cols.max(1),
                    col: i % cols.max(1),
                });
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::DimensionMismatch("ragged rows".to_string()));
            }
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].to_vec())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Checked matrix product.
    pub fn mat_mul(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self, LinalgError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinalgError> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} * vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Copy `block` into this matrix with its top-left corner at (r0, c0).
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    fn check_symmetric(&self) -> Result<(), LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::NotSymmetric);
        }
        let scale = self.frobenius_norm().max(1.0);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(LinalgError::NotSymmetric);
                }
            }
        }
        Ok(())
    }

    /// LU factorization with partial pivoting. Returns the packed factors,
    /// the pivot permutation and the sign of the permutation.
    fn lu(&self) -> Result<(Vec<f64>, Vec<usize>, f64), LinalgError> {
        assert!(self.is_square());
        let n = self.rows;
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let pivot_floor = SINGULARITY_RTOL * self.frobenius_norm();
        for k in 0..n {
            let mut pivot_row = k;
            let mut pivot_val = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = i;
                }
            }
            if pivot_val < pivot_floor || pivot_val == 0.0 {
                return Err(LinalgError::Singular { index: k });
            }
            if pivot_row != k {
                for j in 0..n {
                    lu.swap(k * n + j, pivot_row * n + j);
                }
                perm.swap(k, pivot_row);
                sign = -sign;
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                for j in (k + 1)..n {
                    lu[i * n + j] -= factor * lu[k * n + j];
                }
            }
        }
        Ok((lu, perm, sign))
    }

    /// Inverse via LU with partial pivoting.
    pub fn inverse(&self) -> Result<Self, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::DimensionMismatch(format!(
                "inverse of {}x{}",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        if n == 0 {
            return Ok(Self::zeros(0, 0));
        }
        let (lu, perm, _) = self.lu()?;
        let mut inv = Self::zeros(n, n);
        let mut col = vec![0.0; n];
        for e in 0..n {
            // forward substitution on the permuted unit vector
            for i in 0..n {
                col[i] = if perm[i] == e { 1.0 } else { 0.0 };
                for j in 0..i {
                    col[i] -= lu[i * n + j] * col[j];
                }
            }
            // back substitution
            for i in (0..n).rev() {
                for j in (i + 1)..n {
                    col[i] -= lu[i * n + j] * col[j];
                }
                col[i] /= lu[i * n + i];
            }
            for i in 0..n {
                inv[(i, e)] = col[i];
            }
        }
        Ok(inv)
    }

    /// Determinant via the same LU factorization.
    pub fn determinant(&self) -> Result<f64, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::DimensionMismatch(format!(
                "determinant of {}x{}",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        if n == 0 {
            return Ok(1.0);
        }
        match self.lu() {
            Ok((lu, _, sign)) => {
                let mut det = sign;
                for k in 0..n {
                    det *= lu[k * n + k];
                }
                Ok(det)
            }
            // singular to working precision: the determinant is zero at our scale
            Err(LinalgError::Singular { .. }) => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    /// Lower-triangular Cholesky factor G with G Gᵗ = self.
    pub fn cholesky(&self) -> Result<Self, LinalgError> {
        self.check_symmetric()?;
        let n = self.rows;
        let mut g = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self[(i, j)];
                for k in 0..j {
                    sum -= g[(i, k)] * g[(j, k)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(LinalgError::NotPositiveDefinite {
                            index: i,
                            pivot: sum,
                        });
                    }
                    g[(i, j)] = sum.sqrt();
                } else {
                    g[(i, j)] = sum / g[(j, j)];
                }
            }
        }
        Ok(g)
    }

    /// Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
    /// Returns eigenvalues sorted descending and the matching eigenvector
    /// columns.
    pub fn sym_eig(&self) -> Result<(Vec<f64>, Self), LinalgError> {
        self.check_symmetric()?;
        let n = self.rows;
        if n == 0 {
            return Ok((Vec::new(), Self::zeros(0, 0)));
        }
        let mut a = self.clone();
        // enforce exact symmetry so rotations stay consistent
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = avg;
                a[(j, i)] = avg;
            }
        }
        let mut v = Self::identity(n);
        let max_sweeps = 100;
        let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
        let mut converged = false;
        for _ in 0..max_sweeps {
            let mut off = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= 1e-14 * scale {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        if !converged {
            // final off-diagonal check after the last sweep
            let mut off = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() > 1e-12 * scale {
                return Err(LinalgError::NoConvergence { sweeps: max_sweeps });
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
        let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Self::zeros(n, n);
        for (new_col, &old_col) in order.iter().enumerate() {
            for k in 0..n {
                vectors[(k, new_col)] = v[(k, old_col)];
            }
        }
        Ok((eigenvalues, vectors))
    }

    /// Symmetric PSD square root via the eigendecomposition.
    pub fn sqrt_psd(&self) -> Result<Self, LinalgError> {
        let (vals, vecs) = self.sym_eig()?;
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut roots = Vec::with_capacity(vals.len());
        for (i, &v) in vals.iter().enumerate() {
            if v < -1e-10 * scale.max(1.0) {
                return Err(LinalgError::NotPositiveDefinite { index: i, pivot: v });
            }
            roots.push(v.max(0.0).sqrt());
        }
        let d = Self::diag(&roots);
        vecs.mat_mul(&d)?.mat_mul(&vecs.transpose())
    }

    /// Symmetric inverse square root; requires strictly positive eigenvalues.
    pub fn inv_sqrt_pd(&self) -> Result<Self, LinalgError> {
        let (vals, vecs) = self.sym_eig()?;
        let mut roots = Vec::with_capacity(vals.len());
        for (i, &v) in vals.iter().enumerate() {
            if v <= 0.0 {
                return Err(LinalgError::NotPositiveDefinite { index: i, pivot: v });
            }
            roots.push(1.0 / v.sqrt());
        }
        let d = Self::diag(&roots);
        vecs.mat_mul(&d)?.mat_mul(&vecs.transpose())
    }

    /// Spectral radius estimate by repeated squaring with rescaling:
    /// rho_m = ||a^(2^m)||_F^(1/2^m).
    pub fn spectral_radius(&self, tol: f64) -> Result<f64, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::DimensionMismatch(format!(
                "spectral radius of {}x{}",
                self.rows, self.cols
            )));
        }
        assert!(tol > 0.0 && tol <= 1e-2, "tol must lie in (0, 1e-2]");
        if self.rows == 0 {
            return Ok(0.0);
        }
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        // a = e^{log_scale} * b with ||b||_F = 1; rho_m = exp(log_scale / 2^m)
        let mut b = self.scale(1.0 / norm);
        let mut log_est = norm.ln();
        let mut prev = norm;
        for m in 1..=60u32 {
            b = b.mat_mul(&b)?;
            let bn = b.frobenius_norm();
            if bn == 0.0 {
                return Ok(0.0); // nilpotent
            }
            b = b.scale(1.0 / bn);
            log_est += bn.ln() / 2f64.powi(m as i32);
            let est = log_est.exp();
            if (est - prev).abs() < tol / 2.0 {
                return Ok(est);
            }
            prev = est;
        }
        Ok(prev)
    }

    /// Kronecker product.
    pub fn kron(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let aij = self[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = aij * other[(k, l)];
                    }
                }
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Matrix::from_rows(&rows).map_err(|e| D::Error::custom(e.to_string()))
    }
}
