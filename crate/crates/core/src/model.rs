//! Super-population models, information matrices, optimality criteria and
//! efficiencies.
//!
//! All information matrices here are *per unit*: a design's matrix is the
//! weight-averaged sum `Σ ω_j w(x_j) f(x_j) f(x_j)ᵀ`, and a set of rows
//! contributes `(1/n) Σ w f fᵀ`. Efficiencies compare such matrices with the
//! homogeneous D and A forms, so sample size never enters.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::FeatureBasis;
use crate::dataset::Dataset;
use crate::error::{OdbError, Result};
use crate::linalg::{symmetric_inverse, Lu};
use crate::transform::BoxTransform;

/// Rows per work unit when summing over large datasets. Fixed so the
/// floating-point summation order never depends on the thread count.
pub(crate) const ROW_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `y = f(x)ᵀθ + ε`, `ε ~ N(0, σ²)`.
    #[serde(alias = "linear")]
    LinearGaussian,
    /// `P(y = 1) = 1 / (1 + exp(-f(x)ᵀθ))`.
    Logistic,
}

impl FromStr for Family {
    type Err = OdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "linear_gaussian" | "linear-gaussian" | "gaussian" => {
                Ok(Family::LinearGaussian)
            }
            "logistic" => Ok(Family::Logistic),
            other => Err(OdbError::InvalidInput(format!("unknown family `{other}`"))),
        }
    }
}

/// Optimality criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    /// Maximize `det M`.
    D,
    /// Maximize `-tr M⁻¹`.
    A,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::D => "D",
            Criterion::A => "A",
        })
    }
}

impl FromStr for Criterion {
    type Err = OdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D" | "d" => Ok(Criterion::D),
            "A" | "a" => Ok(Criterion::A),
            other => Err(OdbError::InvalidInput(format!("unknown criterion `{other}`"))),
        }
    }
}

/// The assumed super-population model.
///
/// `theta` doubles as the nominal parameter for local information in the
/// logistic family. Local weights are evaluated at design-space
/// coordinates, i.e. `θ` is applied to box-transformed covariates when
/// computing information, while responses are generated from raw
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub basis: FeatureBasis,
    pub family: Family,
    pub theta: Vec<f64>,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
}

fn default_sigma2() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(basis: FeatureBasis, family: Family, theta: Vec<f64>, sigma2: f64) -> Result<Self> {
        let m = ModelSpec {
            basis,
            family,
            theta,
            sigma2,
        };
        m.validate()?;
        Ok(m)
    }

    /// Linear-Gaussian model with `θ = 0`, `σ² = 1`; enough for designs,
    /// whose information does not depend on `θ` in this family.
    pub fn linear(basis: FeatureBasis) -> Self {
        let q = basis.len();
        ModelSpec {
            basis,
            family: Family::LinearGaussian,
            theta: vec![0.0; q],
            sigma2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != self.basis.len() {
            return Err(OdbError::DimensionMismatch {
                expected: self.basis.len(),
                got: self.theta.len(),
            });
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(OdbError::InvalidInput("theta has non-finite entries".into()));
        }
        if self.family == Family::LinearGaussian && !(self.sigma2 > 0.0 && self.sigma2.is_finite())
        {
            return Err(OdbError::InvalidInput(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }

    /// Number of parameters `q`.
    pub fn n_params(&self) -> usize {
        self.basis.len()
    }

    /// Linear predictor `f(x)ᵀθ` for an already expanded `f(x)`.
    #[inline]
    pub fn eta(&self, features: &[f64]) -> f64 {
        features.iter().zip(&self.theta).map(|(a, b)| a * b).sum()
    }

    /// GLM weight for a linear predictor value.
    #[inline]
    pub fn weight_at_eta(&self, eta: f64) -> f64 {
        match self.family {
            Family::LinearGaussian => 1.0,
            Family::Logistic => logistic_variance(eta),
        }
    }

    /// Writes `√w(x) f(x)` into `out` and returns `w(x)`.
    #[inline]
    pub(crate) fn weighted_features_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.basis.expand_into(x, out);
        let w = self.weight_at_eta(self.eta(out));
        if w != 1.0 {
            let s = w.sqrt();
            out.iter_mut().for_each(|v| *v *= s);
        }
        w
    }
}

/// `π(1 − π)` with `π = 1/(1 + e^{−η})`, computed without overflow.
#[inline]
pub fn logistic_variance(eta: f64) -> f64 {
    let e = (-eta.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `1/(1 + e^{−η})`, computed without overflow.
#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// The local information weight `w(x, θ)`: `π(1 − π)` for the logistic
/// family, `1` for the linear one.
pub fn glm_weight(x: &[f64], model: &ModelSpec) -> Result<f64> {
    let f = model.basis.expand(x)?;
    Ok(model.weight_at_eta(model.eta(&f)))
}

/// A symmetric positive semidefinite per-unit information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix(DMatrix<f64>);

impl InfoMatrix {
    /// Wraps `m`, checking shape and symmetry (relative `1e-10`).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(OdbError::InvalidInput("information matrix must be square".into()));
        }
        let scale = m.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                    return Err(OdbError::InvalidInput(format!(
                        "information matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(InfoMatrix(m))
    }

    pub fn identity(q: usize) -> Self {
        InfoMatrix(DMatrix::identity(q, q))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn scaled(&self, c: f64) -> Self {
        InfoMatrix(&self.0 * c)
    }

    pub fn lu(&self) -> Lu {
        Lu::factor(&self.0)
    }

    pub fn is_singular(&self) -> bool {
        self.lu().is_singular()
    }

    pub fn det(&self) -> f64 {
        self.lu().det()
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        symmetric_inverse(&self.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// A continuous design: finite support in `[-1, 1]^p` with weights summing
/// to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMeasure {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// Slack allowed on the design-space box and on the weight sum.
const BOX_SLACK: f64 = 1e-12;

impl DesignMeasure {
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(OdbError::InvalidInput("design has no support points".into()));
        }
        if support.len() != weights.len() {
            return Err(OdbError::DimensionMismatch {
                expected: support.len(),
                got: weights.len(),
            });
        }
        let p = support[0].len();
        if p == 0 || support.iter().any(|x| x.len() != p) {
            return Err(OdbError::InvalidInput("support points have mixed dimension".into()));
        }
        if support
            .iter()
            .flatten()
            .any(|v| !v.is_finite() || v.abs() > 1.0 + BOX_SLACK)
        {
            return Err(OdbError::InvalidInput(
                "support points must lie in [-1, 1]^p".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(OdbError::InvalidInput("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > BOX_SLACK {
            return Err(OdbError::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(DesignMeasure { support, weights })
    }

    /// Uniform weights over `support`.
    pub fn uniform(support: Vec<Vec<f64>>) -> Result<Self> {
        let k = support.len().max(1);
        let w = vec![1.0 / k as f64; support.len()];
        Self::new(support, w)
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of support points `k`.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }
}

/// `M(ξ) = Σ_j ω_j w(x_j) f(x_j) f(x_j)ᵀ`.
pub fn info_matrix_of_design(design: &DesignMeasure, model: &ModelSpec) -> Result<InfoMatrix> {
    if design.dim() != model.basis.dim() {
        return Err(OdbError::DimensionMismatch {
            expected: model.basis.dim(),
            got: design.dim(),
        });
    }
    let q = model.n_params();
    let mut acc = vec![0.0; q * q];
    let mut a = vec![0.0; q];
    for (x, &w) in design.support().iter().zip(design.weights()) {
        model.weighted_features_into(x, &mut a);
        add_outer(&mut acc, &a, w);
    }
    Ok(finish_symmetric(acc, q, 1.0))
}

/// `(1/n) Σ_{i ∈ rows} w(z_i) f(z_i) f(z_i)ᵀ` with `z_i` the box-transformed
/// covariates of row `i`. With every row selected this is the dataset's
/// per-unit information.
pub fn info_matrix_of_rows(
    data: &Dataset,
    rows: &[usize],
    model: &ModelSpec,
    transform: &BoxTransform,
) -> Result<InfoMatrix> {
    if rows.is_empty() {
        return Err(OdbError::InvalidInput("empty row list".into()));
    }
    check_dims(data, model, transform)?;
    if let Some(&bad) = rows.iter().find(|&&i| i >= data.n_rows()) {
        return Err(OdbError::InvalidInput(format!(
            "row index {bad} out of range for {} rows",
            data.n_rows()
        )));
    }
    let q = model.n_params();
    let partials: Vec<Vec<f64>> = rows
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; q * q];
            let mut z = vec![0.0; data.dim()];
            let mut a = vec![0.0; q];
            for &i in chunk {
                transform.apply_into(data.row(i), &mut z);
                model.weighted_features_into(&z, &mut a);
                add_outer(&mut acc, &a, 1.0);
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; q * q];
    for part in partials {
        acc.iter_mut().zip(part).for_each(|(s, v)| *s += v);
    }
    Ok(finish_symmetric(acc, q, 1.0 / rows.len() as f64))
}

/// Per-unit information of the whole dataset, `M(x_U)`.
pub fn info_matrix_of_dataset(
    data: &Dataset,
    model: &ModelSpec,
    transform: &BoxTransform,
) -> Result<InfoMatrix> {
    let all: Vec<usize> = (0..data.n_rows()).collect();
    info_matrix_of_rows(data, &all, model, transform)
}

pub(crate) fn check_dims(data: &Dataset, model: &ModelSpec, transform: &BoxTransform) -> Result<()> {
    if data.dim() != model.basis.dim() {
        return Err(OdbError::DimensionMismatch {
            expected: model.basis.dim(),
            got: data.dim(),
        });
    }
    if transform.dim() != data.dim() {
        return Err(OdbError::DimensionMismatch {
            expected: data.dim(),
            got: transform.dim(),
        });
    }
    Ok(())
}

/// Accumulates the upper triangle of `w a aᵀ`.
#[inline]
pub(crate) fn add_outer(acc: &mut [f64], a: &[f64], w: f64) {
    let q = a.len();
    for i in 0..q {
        let ai = w * a[i];
        if ai == 0.0 {
            continue;
        }
        let row = &mut acc[i * q..(i + 1) * q];
        for j in i..q {
            row[j] += ai * a[j];
        }
    }
}

pub(crate) fn finish_symmetric(acc: Vec<f64>, q: usize, scale: f64) -> InfoMatrix {
    let mut m = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in i..q {
            let v = acc[i * q + j] * scale;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    InfoMatrix(m)
}

/// `Φ_D = det M`, `Φ_A = −tr M⁻¹`. The A criterion fails with
/// [`OdbError::Singular`] on a singular matrix.
pub fn criterion_value(m: &InfoMatrix, criterion: Criterion) -> Result<f64> {
    match criterion {
        Criterion::D => Ok(m.det()),
        Criterion::A => Ok(-m.inverse()?.trace()),
    }
}

/// Efficiency of `m` relative to the optimum `m_star`: `(|M|/|M*|)^{1/q}`
/// for D, `tr M*⁻¹ / tr M⁻¹` for A.
///
/// A singular `m` has efficiency 0. Values above 1 are clipped when the
/// excess is at most `tolerance`; larger excesses mean `m_star` was not the
/// optimum over a space containing `m`'s points and are reported as
/// [`OdbError::EfficiencyAboveOne`].
pub fn efficiency(
    m: &InfoMatrix,
    m_star: &InfoMatrix,
    criterion: Criterion,
    tolerance: f64,
) -> Result<f64> {
    if m.dim() != m_star.dim() {
        return Err(OdbError::DimensionMismatch {
            expected: m_star.dim(),
            got: m.dim(),
        });
    }
    let star = m_star.lu();
    if star.is_singular() {
        return Err(OdbError::Singular);
    }
    let lu = m.lu();
    if lu.is_singular() {
        return Ok(0.0);
    }
    let value = match criterion {
        Criterion::D => {
            let q = m.dim() as f64;
            ((lu.log_abs_det()? - star.log_abs_det()?) / q).exp()
        }
        Criterion::A => {
            let t_star = symmetric_inverse(m_star.matrix())?.trace();
            let t = symmetric_inverse(m.matrix())?.trace();
            t_star / t
        }
    };
    if value > 1.0 + tolerance {
        return Err(OdbError::EfficiencyAboveOne { value });
    }
    Ok(value.min(1.0))
}
