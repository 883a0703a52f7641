//! Affine rescaling of raw covariates onto the design space `[-1, 1]^p`.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{OdbError, Result};

/// Per-covariate `(min, max)` bounds; `min` maps to `-1` and `max` to `+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxTransform {
    bounds: Vec<(f64, f64)>,
}

impl BoxTransform {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(OdbError::InvalidInput("no covariate bounds".into()));
        }
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                return Err(OdbError::InvalidInput(format!(
                    "covariate {j}: need finite min < max, got ({lo}, {hi})"
                )));
            }
        }
        Ok(BoxTransform { bounds })
    }

    /// The transform already in design coordinates.
    pub fn identity(dim: usize) -> Self {
        BoxTransform {
            bounds: vec![(-1.0, 1.0); dim],
        }
    }

    /// Fits observed column minima and maxima.
    pub fn fit(data: &Dataset) -> Result<Self> {
        let p = data.dim();
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); p];
        for row in data.rows() {
            for (b, &v) in bounds.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        if let Some(j) = bounds.iter().position(|&(lo, hi)| hi <= lo) {
            return Err(OdbError::ConstantColumn(data.covariate_names()[j].clone()));
        }
        Ok(BoxTransform { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &v), &(lo, hi)) in out.iter_mut().zip(x).zip(&self.bounds) {
            *o = (2.0 * v - (lo + hi)) / (hi - lo);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| 0.5 * (v * (hi - lo) + lo + hi))
            .collect()
    }

    /// The whole dataset mapped into design coordinates (response kept).
    pub fn apply_dataset(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.dim() {
            return Err(OdbError::DimensionMismatch {
                expected: self.dim(),
                got: data.dim(),
            });
        }
        let mut flat = vec![0.0; data.n_rows() * data.dim()];
        for (row, out) in data.rows().zip(flat.chunks_exact_mut(data.dim())) {
            self.apply_into(row, out);
        }
        Dataset::from_flat(
            data.n_rows(),
            data.dim(),
            flat,
            data.response().map(<[f64]>::to_vec),
        )?
        .with_names(
            data.covariate_names().to_vec(),
            data.response_name().map(str::to_string),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_on_unit_box() {
        let ds = Dataset::from_rows(&[vec![-1.0], vec![0.3], vec![1.0]], None).unwrap();
        let t = BoxTransform::fit(&ds).unwrap();
        assert_eq!(t.apply(&[0.3]), vec![0.3]);
        assert_eq!(t.apply(&[-1.0]), vec![-1.0]);
    }

    #[test]
    fn affine_map() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![5.0], vec![10.0]], None).unwrap();
        let t = BoxTransform::fit(&ds).unwrap();
        let z: Vec<f64> = ds.rows().map(|r| t.apply(r)[0]).collect();
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_column_rejected() {
        let ds = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 2.0]], None).unwrap();
        assert!(matches!(BoxTransform::fit(&ds), Err(OdbError::ConstantColumn(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(points in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20)) {
            let ds = Dataset::from_rows(&points, None).unwrap();
            prop_assume!(BoxTransform::fit(&ds).is_ok());
            let t = BoxTransform::fit(&ds).unwrap();
            for row in ds.rows() {
                let z = t.apply(row);
                prop_assert!(z.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
                let back = t.invert(&z);
                for (a, b) in back.iter().zip(row) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }
}
