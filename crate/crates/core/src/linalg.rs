//! Dense row-major matrices, the Khatri–Rao product, a cyclic Jacobi
//! eigensolver for symmetric matrices, and the two least-eigenvalue
//! perturbation bounds as checkable predicates.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Slack used by the perturbation-lemma predicates.
pub const LEMMA_SLACK: f64 = 1e-10;
/// Relative symmetry tolerance accepted by the eigensolver.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Off-diagonal Frobenius mass, relative to ‖M‖_F, at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const MAX_EIGEN_DIM: usize = 2048;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matmul",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matvec",
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "Matrix::tr_matvec",
                expected: self.rows,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for p in 0..self.cols {
                let rp = r[p];
                if rp == 0.0 {
                    continue;
                }
                for q in p..self.cols {
                    out[(p, q)] += rp * r[q];
                }
            }
        }
        for p in 0..self.cols {
            for q in 0..p {
                out[(p, q)] = out[(q, p)];
            }
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "Matrix::sub", |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "Matrix::add", |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, context: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.require_shape(other, context)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    fn require_shape(&self, other: &Matrix, context: &'static str) -> Result<()> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.rows,
                found: other.rows,
            });
        }
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.cols,
                found: other.cols,
            });
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `(self + selfᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Column-wise Kronecker product of `a` (m×r) and `b` (n×r): column `j` of
/// the (mn)×r result is `a[:, j] ⊗ b[:, j]`, ordered
/// `(a₁b₁, a₁b₂, …, a₁bₙ, a₂b₁, …)`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "khatri_rao",
            expected: a.cols(),
            found: b.cols(),
        });
    }
    let (m, r) = a.shape();
    let n = b.rows();
    let mut out = Matrix::zeros(m * n, r);
    for i in 0..m {
        for k in 0..n {
            let dst = out.row_mut(i * n + k);
            for ((o, &x), &y) in dst.iter_mut().zip(a.row(i)).zip(b.row(k)) {
                *o = x * y;
            }
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Matrix,
    pub sweeps: usize,
}

impl SymmetricSpectrum {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }

    /// Largest |eigenvalue|, which is the spectral norm for symmetric input.
    pub fn spectral_radius(&self) -> f64 {
        self.lambda_min().abs().max(self.lambda_max().abs())
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn apply_function(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        Matrix::from_fn(n, n, |i, j| (0..n).map(|k| v[(i, k)] * fl[k] * v[(j, k)]).sum())
    }
}

/// Full spectrum by cyclic Jacobi rotations, iterated until the
/// off-diagonal Frobenius mass is at most `1e-12·‖M‖_F`.
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricSpectrum> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "symmetric_eigen",
            expected: m.rows(),
            found: m.cols(),
        });
    }
    let n = m.rows();
    if n == 0 || n > MAX_EIGEN_DIM {
        return Err(Error::InvalidArgument(format!(
            "symmetric eigensolver supports 1 ≤ n ≤ {MAX_EIGEN_DIM}, got {n}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let fro = m.frobenius_norm();
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOL * fro {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: SYMMETRY_TOL * fro,
        });
    }

    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let target = JACOBI_TOL * fro;
    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) > target {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_kp = akp - s * (akq + tau * akp);
                    let new_kq = akq + s * (akp - tau * akq);
                    a[(k, p)] = new_kp;
                    a[(p, k)] = new_kp;
                    a[(k, q)] = new_kq;
                    a[(q, k)] = new_kq;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp - s * (vkq + tau * vkp);
                    v[(k, q)] = vkq + s * (vkp - tau * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(SymmetricSpectrum {
        eigenvalues,
        eigenvectors,
        sweeps,
    })
}

pub fn lambda_min_symmetric(m: &Matrix) -> Result<SymmetricSpectrum> {
    symmetric_eigen(m)
}

/// Spectral norm of a symmetric matrix (max |eigenvalue|); non-symmetric
/// input is symmetrized first.
pub fn spectral_norm_symmetric(m: &Matrix) -> Result<f64> {
    Ok(symmetric_eigen(&m.symmetrized())?.spectral_radius())
}

fn require_same_square(a: &Matrix, b: &Matrix, context: &'static str) -> Result<()> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.rows() * a.cols(),
            found: b.rows() * b.cols(),
        });
    }
    Ok(())
}

/// `λ_min(A) ≥ λ_min(B) − ‖A − B‖₂` for symmetric PSD `A`, `B`.
/// Always true mathematically; `false` flags a solver problem.
pub fn check_weyl_l2(a: &Matrix, b: &Matrix) -> Result<bool> {
    require_same_square(a, b, "check_weyl_l2")?;
    let la = symmetric_eigen(a)?.lambda_min();
    let lb = symmetric_eigen(b)?.lambda_min();
    let gap = spectral_norm_symmetric(&a.sub(b)?)?;
    Ok(la - (lb - gap) >= -LEMMA_SLACK)
}

/// Entrywise version: if every `|A_ij − B_ij| ≤ ε/n²` then
/// `λ_min(A) ≥ λ_min(B) − ε`. Errors when the entrywise precondition fails.
pub fn check_frobenius_entrywise(a: &Matrix, b: &Matrix, eps: f64) -> Result<bool> {
    require_same_square(a, b, "check_frobenius_entrywise")?;
    let n = a.rows() as f64;
    let allowed = eps / (n * n);
    let worst = a.sub(b)?.max_abs();
    if worst > allowed {
        return Err(Error::Precondition(format!(
            "entrywise gap {worst:e} exceeds ε/n² = {allowed:e}"
        )));
    }
    let la = symmetric_eigen(a)?.lambda_min();
    let lb = symmetric_eigen(b)?.lambda_min();
    Ok(la - (lb - eps) >= -LEMMA_SLACK)
}
