//! Small dense factorizations for q×q information matrices.
//!
//! Every determinant and inverse in the crate goes through [`Lu`], so the
//! singularity rule is applied uniformly: a matrix is singular when some
//! pivot magnitude falls below [`PIVOT_RATIO`] times the largest pivot.

use nalgebra::{DMatrix, DVector};

use crate::error::{OdbError, Result};

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_RATIO: f64 = 1e-12;

/// LU factorization with partial (row) pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
}

impl Lu {
    pub fn factor(a: &DMatrix<f64>) -> Self {
        assert!(a.is_square(), "LU of a non-square matrix");
        let n = a.nrows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;

        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            if pivot == 0.0 {
                // Column already eliminated; the ratio test below catches it.
                continue;
            }
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= factor * u;
                    }
                }
            }
        }

        let largest = (0..n).map(|i| lu[(i, i)].abs()).fold(0.0_f64, f64::max);
        let singular = n > 0
            && (largest == 0.0
                || (0..n).any(|i| lu[(i, i)].abs() < PIVOT_RATIO * largest)
                || !largest.is_finite());
        Lu {
            lu,
            perm,
            sign,
            singular,
        }
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Determinant; exactly `0.0` when the pivot test flags singularity.
    pub fn det(&self) -> f64 {
        if self.singular {
            return 0.0;
        }
        self.sign * (0..self.dim()).map(|i| self.lu[(i, i)]).product::<f64>()
    }

    /// `ln |det|`, or an error if singular.
    pub fn log_abs_det(&self) -> Result<f64> {
        if self.singular {
            return Err(OdbError::Singular);
        }
        Ok((0..self.dim()).map(|i| self.lu[(i, i)].abs().ln()).sum())
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if self.singular {
            return Err(OdbError::Singular);
        }
        let n = self.dim();
        let mut x = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        if self.singular {
            return Err(OdbError::Singular);
        }
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            let col = self.solve(&e)?;
            inv.set_column(j, &col);
        }
        Ok(inv)
    }
}

/// Inverse of a symmetric matrix, re-symmetrized to remove rounding skew.
pub fn symmetric_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = Lu::factor(a).inverse()?;
    Ok((&inv + inv.transpose()) * 0.5)
}

/// A nonzero vector `c` with `A c ≈ 0`, or `None` when the columns of `A` are
/// linearly independent. Gaussian elimination with partial pivoting; the
/// free variable is the first non-pivot column.
pub fn null_vector(a: &DMatrix<f64>) -> Option<DVector<f64>> {
    let (rows, cols) = a.shape();
    let mut m = a.clone();
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        let mut c = DVector::zeros(cols);
        if cols > 0 {
            c[0] = 1.0;
            return Some(c);
        }
        return None;
    }
    let tol = 1e-10 * scale;
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let mut p = r;
        let mut best = m[(r, c)].abs();
        for i in (r + 1)..rows {
            if m[(i, c)].abs() > best {
                best = m[(i, c)].abs();
                p = i;
            }
        }
        if best <= tol {
            continue;
        }
        m.swap_rows(p, r);
        let pv = m[(r, c)];
        for j in c..cols {
            m[(r, j)] /= pv;
        }
        for i in 0..rows {
            if i != r {
                let f = m[(i, c)];
                if f != 0.0 {
                    for j in c..cols {
                        let v = m[(r, j)];
                        m[(i, j)] -= f * v;
                    }
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    let free = (0..cols).find(|c| !pivot_cols.contains(c))?;
    let mut v = DVector::zeros(cols);
    v[free] = 1.0;
    for (row, &pc) in pivot_cols.iter().enumerate() {
        v[pc] = -m[(row, free)];
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn det_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        assert_relative_eq!(Lu::factor(&a).det(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_by_ratio() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-14]);
        assert!(Lu::factor(&a).is_singular());
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-8]);
        assert!(!Lu::factor(&b).is_singular());
    }

    #[test]
    fn zero_column_is_singular() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 3.0, 0.0, 1.0, 0.0, 0.0, 4.0]);
        let lu = Lu::factor(&a);
        assert!(lu.is_singular());
        assert_eq!(lu.det(), 0.0);
    }

    #[test]
    fn inverse_roundtrip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = Lu::factor(&a).inverse().unwrap();
        let id = &a * &inv;
        assert_relative_eq!(id, DMatrix::identity(3, 3), epsilon = 1e-13);
        // det by cofactor expansion
        let cof = 4.0 * (3.0 * 2.0 - 0.2 * 0.2) - 1.0 * (1.0 * 2.0 - 0.2 * 0.5)
            + 0.5 * (1.0 * 0.2 - 3.0 * 0.5);
        assert_relative_eq!(Lu::factor(&a).det(), cof, epsilon = 1e-12);
    }

    #[test]
    fn null_vector_of_dependent_columns() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 1.0]);
        let v = null_vector(&a).unwrap();
        assert!((&a * &v).norm() < 1e-12);
        assert!(v.norm() > 0.5);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(null_vector(&b).is_none());
    }
}
