//! Regression feature bases `f(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{OdbError, Result};

/// Which family of monomials a [`FeatureBasis`] spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `(1, x_1, …, x_p)`.
    Linear,
    /// `(1, x_1, …, x_p, x_1², …, x_p², x_1x_2, x_1x_3, …, x_{p-1}x_p)`.
    Quadratic,
    /// Arbitrary monomials given by exponent vectors; the first must be the
    /// all-zero intercept.
    Custom(Vec<Vec<u32>>),
}

/// A feature map from a point in `R^p` to `R^q`, intercept first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBasis {
    kind: BasisKind,
    dim: usize,
}

impl FeatureBasis {
    pub fn linear(dim: usize) -> Result<Self> {
        Self::new(BasisKind::Linear, dim)
    }

    pub fn quadratic(dim: usize) -> Result<Self> {
        Self::new(BasisKind::Quadratic, dim)
    }

    pub fn custom(dim: usize, monomials: Vec<Vec<u32>>) -> Result<Self> {
        Self::new(BasisKind::Custom(monomials), dim)
    }

    pub fn new(kind: BasisKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(OdbError::InvalidInput("basis dimension must be at least 1".into()));
        }
        if let BasisKind::Custom(monos) = &kind {
            if monos.len() < 2 {
                return Err(OdbError::InvalidInput(
                    "a basis needs at least two functions".into(),
                ));
            }
            if let Some(m) = monos.iter().find(|m| m.len() != dim) {
                return Err(OdbError::DimensionMismatch {
                    expected: dim,
                    got: m.len(),
                });
            }
            if monos[0].iter().any(|&e| e != 0) {
                return Err(OdbError::InvalidInput(
                    "the first monomial must be the intercept".into(),
                ));
            }
            for (i, m) in monos.iter().enumerate() {
                if monos[..i].contains(m) {
                    return Err(OdbError::InvalidInput(format!("duplicate monomial {m:?}")));
                }
            }
        }
        Ok(FeatureBasis { kind, dim })
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    /// Number of covariates `p`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis functions `q`, intercept included.
    pub fn len(&self) -> usize {
        let p = self.dim;
        match &self.kind {
            BasisKind::Linear => p + 1,
            BasisKind::Quadratic => 1 + 2 * p + p * (p - 1) / 2,
            BasisKind::Custom(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Highest total degree among the basis functions.
    pub fn degree(&self) -> u32 {
        match &self.kind {
            BasisKind::Linear => 1,
            BasisKind::Quadratic => 2,
            BasisKind::Custom(m) => m.iter().map(|e| e.iter().sum()).max().unwrap_or(0),
        }
    }

    /// Writes `f(x)` into `out` (length `q`). No dimension checks.
    #[inline]
    pub fn expand_into(&self, x: &[f64], out: &mut [f64]) {
        let p = self.dim;
        out[0] = 1.0;
        match &self.kind {
            BasisKind::Linear => out[1..=p].copy_from_slice(x),
            BasisKind::Quadratic => {
                out[1..=p].copy_from_slice(x);
                for j in 0..p {
                    out[1 + p + j] = x[j] * x[j];
                }
                let mut k = 1 + 2 * p;
                for i in 0..p {
                    for j in (i + 1)..p {
                        out[k] = x[i] * x[j];
                        k += 1;
                    }
                }
            }
            BasisKind::Custom(monos) => {
                for (o, m) in out.iter_mut().zip(monos) {
                    *o = m
                        .iter()
                        .zip(x)
                        .map(|(&e, &v)| v.powi(e as i32))
                        .product();
                }
            }
        }
    }

    /// `f(x)`, checking that `x` has the basis dimension and is finite.
    pub fn expand(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(OdbError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OdbError::InvalidInput("non-finite point".into()));
        }
        let mut out = vec![0.0; self.len()];
        self.expand_into(x, &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_at_origin() {
        let b = FeatureBasis::quadratic(2).unwrap();
        assert_eq!(b.expand(&[0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn quadratic_ordering() {
        let b = FeatureBasis::quadratic(2).unwrap();
        assert_eq!(
            b.expand(&[-1.0, 1.0]).unwrap(),
            vec![1.0, -1.0, 1.0, 1.0, 1.0, -1.0]
        );
        assert_eq!(FeatureBasis::quadratic(3).unwrap().len(), 10);
    }

    #[test]
    fn linear_ten_dims() {
        let b = FeatureBasis::linear(10).unwrap();
        let f = b.expand(&[0.5; 10]).unwrap();
        assert_eq!(f.len(), 11);
        assert_eq!(f[0], 1.0);
        assert!(f[1..].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn dimension_mismatch() {
        let b = FeatureBasis::linear(2).unwrap();
        assert!(matches!(
            b.expand(&[1.0]),
            Err(OdbError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn custom_monomials() {
        let b = FeatureBasis::custom(1, vec![vec![0], vec![1], vec![3]]).unwrap();
        assert_eq!(b.expand(&[2.0]).unwrap(), vec![1.0, 2.0, 8.0]);
        assert_eq!(b.degree(), 3);
        assert!(FeatureBasis::custom(1, vec![vec![1], vec![0]]).is_err());
        assert!(FeatureBasis::custom(1, vec![vec![0]]).is_err());
        assert!(FeatureBasis::custom(1, vec![vec![0], vec![1], vec![1]]).is_err());
    }
}
