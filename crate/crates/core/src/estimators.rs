//! Model fits on a subsample: ordinary least squares for the linear family
//! and Newton–Raphson maximum likelihood for the logistic one.
//!
//! Fits use the raw covariates, so `θ̂` estimates the parameters on the
//! scale the responses were generated on.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::dataset::Dataset;
use crate::error::{OdbError, Result};
use crate::linalg::{symmetric_inverse, Lu};
use crate::model::{logistic, Family, ModelSpec};

fn matrix_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    /// `σ̂²(FᵀF)⁻¹` for OLS, the inverse information at `θ̂` for logistic.
    #[serde(serialize_with = "matrix_rows")]
    pub covariance: DMatrix<f64>,
    /// `RSS / (n − q)`; `None` for logistic fits and when `n = q`.
    pub sigma2_hat: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood after each accepted Newton step (logistic only).
    #[serde(skip)]
    pub loglik_trace: Vec<f64>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `F` (`n × q`, raw covariates) and `y` for the selected rows.
pub fn design_rows(data: &Dataset, rows: &[usize], model: &ModelSpec) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if rows.is_empty() {
        return Err(OdbError::InvalidInput("empty row list".into()));
    }
    if data.dim() != model.basis.dim() {
        return Err(OdbError::DimensionMismatch {
            expected: model.basis.dim(),
            got: data.dim(),
        });
    }
    let y = data
        .response()
        .ok_or_else(|| OdbError::InvalidInput("dataset has no response column".into()))?;
    let q = model.n_params();
    let mut f = DMatrix::zeros(rows.len(), q);
    let mut buf = vec![0.0; q];
    for (r, &i) in rows.iter().enumerate() {
        if i >= data.n_rows() {
            return Err(OdbError::InvalidInput(format!("row index {i} out of range")));
        }
        model.basis.expand_into(data.row(i), &mut buf);
        for (c, &v) in buf.iter().enumerate() {
            f[(r, c)] = v;
        }
    }
    Ok((f, DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]))))
}

/// Least squares for an explicit design matrix. The normal equations are
/// solved by LU and refined once on the residual.
pub fn least_squares(f: &DMatrix<f64>, y: &DVector<f64>) -> Result<FitResult> {
    let (n, q) = f.shape();
    if y.len() != n {
        return Err(OdbError::DimensionMismatch { expected: n, got: y.len() });
    }
    let ftf = f.transpose() * f;
    let lu = Lu::factor(&ftf);
    if lu.is_singular() {
        return Err(OdbError::Singular);
    }
    let mut theta = lu.solve(&(f.transpose() * y))?;
    let resid = y - f * &theta;
    theta += lu.solve(&(f.transpose() * &resid))?;
    let resid = y - f * &theta;
    let rss = resid.dot(&resid);
    let unscaled = symmetric_inverse(&ftf)?;
    let sigma2_hat = (n > q).then(|| rss / (n - q) as f64);
    Ok(FitResult {
        theta_hat: theta.iter().copied().collect(),
        covariance: unscaled * sigma2_hat.unwrap_or(f64::NAN),
        sigma2_hat,
        converged: true,
        iterations: 1,
        loglik_trace: Vec::new(),
    })
}

/// OLS on the selected rows. When `n = q` the covariance is scaled by the
/// model's `σ²` since no residual degrees of freedom remain.
pub fn ols_fit(data: &Dataset, rows: &[usize], model: &ModelSpec) -> Result<FitResult> {
    let (f, y) = design_rows(data, rows, model)?;
    let mut fit = least_squares(&f, &y)?;
    if fit.sigma2_hat.is_none() {
        fit.covariance = symmetric_inverse(&(f.transpose() * &f))? * model.sigma2;
    }
    Ok(fit)
}

const MAX_NEWTON: usize = 100;
const SEPARATION_NORM: f64 = 1e3;
/// Euclidean norm of the score below which a fit counts as converged.
const SCORE_TOLERANCE: f64 = 1e-8;

fn loglik(f: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let eta = f * theta;
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| {
            // y η − ln(1 + e^η), stable for large |η|
            let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            yi * e - log1pexp
        })
        .sum()
}

/// Logistic maximum likelihood from `θ₀ = 0` by Newton–Raphson with step
/// halving. Converged when `‖score‖ / n < 1e-10`; separation is reported
/// as an error rather than returned as a diverging fit.
pub fn logistic_fit(data: &Dataset, rows: &[usize], model: &ModelSpec) -> Result<FitResult> {
    let (f, y) = design_rows(data, rows, model)?;
    logistic_fit_matrix(&f, &y)
}

pub fn logistic_fit_matrix(f: &DMatrix<f64>, y: &DVector<f64>) -> Result<FitResult> {
    let (n, q) = f.shape();
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(OdbError::InvalidInput("logistic responses must be 0 or 1".into()));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(OdbError::Separation(format!("all {n} responses are {}", y[0])));
    }
    let mut theta = DVector::zeros(q);
    let mut ll = loglik(f, y, &theta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    // row-major copy so the per-row accumulation reads contiguous memory
    let rows: Vec<f64> = (0..n).flat_map(|i| f.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let score_info = |theta: &DVector<f64>| {
        let mut score = DVector::zeros(q);
        let mut acc = vec![0.0; q * q];
        for (i, a) in rows.chunks_exact(q).enumerate() {
            let eta: f64 = a.iter().zip(theta.iter()).map(|(x, t)| x * t).sum();
            let p = logistic(eta);
            let r = y[i] - p;
            let w = p * (1.0 - p);
            for j in 0..q {
                score[j] += a[j] * r;
                let aj = w * a[j];
                for k in j..q {
                    acc[j * q + k] += aj * a[k];
                }
            }
        }
        let info = DMatrix::from_fn(q, q, |j, k| acc[j.min(k) * q + j.max(k)]);
        (score, info)
    };
    let (mut score, mut info) = score_info(&theta);
    while score.norm() >= SCORE_TOLERANCE * 1e-2 && iterations < MAX_NEWTON {
        iterations += 1;
        let lu = Lu::factor(&info);
        if lu.is_singular() {
            return Err(OdbError::Separation("information matrix became singular".into()));
        }
        let step = lu.solve(&score)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta + &step * t;
            let cand_ll = loglik(f, y, &cand);
            if cand_ll >= ll {
                theta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            // Close to the optimum the log-likelihood gain drowns in
            // rounding; a full step that shrinks the score is still progress.
            if t == 1.0 && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) && score_info(&cand).0.norm() < score.norm() {
                theta = cand;
                ll = ll.max(cand_ll);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(ll);
        if theta.norm() > SEPARATION_NORM {
            return Err(OdbError::Separation(format!(
                "‖θ̂‖ exceeded {SEPARATION_NORM} after {iterations} iterations"
            )));
        }
        (score, info) = score_info(&theta);
    }
    let eta = f * &theta;
    let perfect = eta.iter().zip(y.iter()).all(|(&e, &yi)| (logistic(e) - yi).abs() < 1e-8);
    if perfect {
        return Err(OdbError::Separation("fitted probabilities reproduce every response".into()));
    }
    let converged = score.norm() < SCORE_TOLERANCE;
    Ok(FitResult {
        theta_hat: theta.iter().copied().collect(),
        covariance: symmetric_inverse(&info)?,
        sigma2_hat: None,
        converged,
        iterations,
        loglik_trace: trace,
    })
}

/// Dispatches on the model family.
pub fn fit(data: &Dataset, rows: &[usize], model: &ModelSpec) -> Result<FitResult> {
    match model.family {
        Family::LinearGaussian => ols_fit(data, rows, model),
        Family::Logistic => logistic_fit(data, rows, model),
    }
}

/// Score vector `Fᵀ(y − π)` at `theta`.
pub fn logistic_score(f: &DMatrix<f64>, y: &DVector<f64>, theta: &[f64]) -> DVector<f64> {
    let theta = DVector::from_column_slice(theta);
    let eta = f * theta;
    let resid = DVector::from_iterator(y.len(), eta.iter().zip(y.iter()).map(|(&e, &yi)| yi - logistic(e)));
    f.transpose() * resid
}
