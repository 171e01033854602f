//! Small dense linear algebra: row-major matrices, one-sided Jacobi singular
//! values, and seeded random orthogonal matrices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, lit, Scalar};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &[T], b: &[T]) -> Self {
        let data = a
            .iter()
            .flat_map(|&x| b.iter().map(move |&y| x * y))
            .collect();
        Self {
            rows: a.len(),
            cols: b.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] = out.data[i * other.cols + j] + a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// `Mᵀ v`.
    pub fn transpose_mul_vec(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate().take(self.rows) {
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o = *o + m * vi;
            }
        }
        out
    }

    pub fn frobenius(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn rank(&self, rel_tol: T) -> Result<usize> {
        let sv = singular_values(self)?;
        let top = sv.first().copied().unwrap_or_else(T::zero);
        Ok(sv.iter().filter(|&&s| s > top * rel_tol).count())
    }
}

/// Singular values of a square matrix, sorted nonincreasing.
///
/// One-sided (Hestenes) Jacobi: columns are rotated pairwise until mutually
/// orthogonal; the singular values are then the column norms. Rotations are
/// orthogonal, so the Frobenius norm is preserved up to rounding.
pub fn singular_values<T: Scalar>(m: &Matrix<T>) -> Result<Vec<T>> {
    if m.rows != m.cols {
        return Err(Error::NonSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if let Some(index) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let n = m.cols;
    // Column-major working copy.
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| (0..n).map(|i| m.get(i, j)).collect()).collect();
    let eps = T::epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (a, b) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (x, y) = (*a, *b);
                    *a = c * x - s * y;
                    *b = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    Ok(sv)
}

/// Seeded Haar-like random orthogonal matrix: Gram-Schmidt (applied twice)
/// on the rows of a standard Gaussian matrix.
pub fn random_orthogonal<T: Scalar>(d: usize, seed: u64) -> Matrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut rows: Vec<Vec<T>> = (0..d)
            .map(|_| {
                (0..d)
                    .map(|_| lit::<T>(StandardNormal.sample(&mut rng)))
                    .collect()
            })
            .collect();
        if orthonormalize_rows(&mut rows) {
            return Matrix {
                rows: d,
                cols: d,
                data: rows.into_iter().flatten().collect(),
            };
        }
    }
}

fn orthonormalize_rows<T: Scalar>(rows: &mut [Vec<T>]) -> bool {
    for i in 0..rows.len() {
        for _pass in 0..2 {
            for k in 0..i {
                let proj = dot(&rows[i], &rows[k]);
                let (done, rest) = rows.split_at_mut(i);
                for (x, &b) in rest[0].iter_mut().zip(&done[k]) {
                    *x = *x - proj * b;
                }
            }
        }
        let norm = dot(&rows[i], &rows[i]).sqrt();
        if norm <= T::epsilon() * lit(1e3) {
            return false;
        }
        rows[i].iter_mut().for_each(|x| *x = *x / norm);
    }
    true
}
