//! Monte Carlo comparison of samplers on a synthetic population.
//!
//! One covariate table is drawn per study and kept fixed; each replication
//! draws a fresh response vector, selects subsamples with every configured
//! sampler, fits the model on them and records efficiencies. Deterministic
//! selections (ODB, IBOSS) are computed once; SRS and PPS are repeated
//! `srs_pps_repeats` times per replication with seeds from named streams.
//!
//! A study is a pure function of its [`StudyConfig`]: replications run in
//! parallel but are collected in replication order, and every parallel sum
//! uses fixed-size chunks, so outputs do not depend on the thread count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::basis::{BasisKind, FeatureBasis};
use crate::dataset::Dataset;
use crate::design::{
    ideal_info_matrix, solve_continuous_design, CandidateSet, IdealInfo, SolvedDesign,
    SolverSettings,
};
use crate::error::{OdbError, Result};
use crate::estimators::fit;
use crate::linalg::{symmetric_inverse, Lu};
use crate::model::{info_matrix_of_dataset, info_matrix_of_rows, logistic, Criterion, Family, ModelSpec};
use crate::samplers::{
    exchange_select, iboss_select, odb_select_with_design, pps_weights, srs_select, Distance,
    ExchangeSettings, PpsSampler, SampleSelection, Sampler,
};
use crate::seeds;
use crate::transform::BoxTransform;

/// Joint law of the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateLaw {
    /// Independent `U(low, high)` on every axis.
    Uniform { low: f64, high: f64 },
    Gaussian { mean: Vec<f64>, covariance: Vec<Vec<f64>> },
}

/// The super-population model as written in a config file. `sigma2 = 0`
/// is allowed here and means noise-free responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub basis: BasisKind,
    pub family: Family,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub seed: u64,
    #[serde(rename = "N")]
    pub population_size: usize,
    pub n: usize,
    #[serde(rename = "R")]
    pub replications: usize,
    pub srs_pps_repeats: usize,
    pub dim: usize,
    pub covariates: CovariateLaw,
    pub model: ModelConfig,
    /// Parameter at which local information is evaluated; defaults to the
    /// true `θ`.
    pub nominal_theta: Option<Vec<f64>>,
    pub criteria: Vec<Criterion>,
    pub samplers: Vec<Sampler>,
    pub solver: SolverSettings,
    pub grid_resolution: Option<usize>,
    pub distance: Distance,
}

const KEYS: &[&str] = &[
    "seed",
    "N",
    "n",
    "R",
    "srs_pps_repeats",
    "dim",
    "covariates",
    "model",
    "nominal_theta",
    "criteria",
    "samplers",
    "solver",
    "grid_resolution",
    "distance",
];

impl StudyConfig {
    /// Parses and validates a JSON config, reporting every problem at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| OdbError::Config(vec![format!("not valid JSON: {e}")]))?;
        let Value::Object(map) = value else {
            return Err(OdbError::Config(vec!["config must be a JSON object".into()]));
        };
        let mut errors = Vec::new();
        for key in map.keys() {
            if !KEYS.contains(&key.as_str()) {
                errors.push(format!("unknown key `{key}`"));
            }
        }
        fn field<T: serde::de::DeserializeOwned>(
            map: &Map<String, Value>,
            key: &str,
            errors: &mut Vec<String>,
        ) -> Option<T> {
            let v = map.get(key)?;
            if v.is_null() {
                return None;
            }
            match serde_json::from_value(v.clone()) {
                Ok(t) => Some(t),
                Err(e) => {
                    errors.push(format!("`{key}`: {e}"));
                    None
                }
            }
        }
        let required = |key: &str, errors: &mut Vec<String>| {
            if !map.contains_key(key) {
                errors.push(format!("missing required key `{key}`"));
            }
        };
        for key in ["seed", "N", "n", "R", "covariates", "model"] {
            required(key, &mut errors);
        }

        let seed = field::<u64>(&map, "seed", &mut errors);
        let big_n = field::<usize>(&map, "N", &mut errors);
        let n = field::<usize>(&map, "n", &mut errors);
        let reps = field::<usize>(&map, "R", &mut errors);
        let repeats = field::<usize>(&map, "srs_pps_repeats", &mut errors).unwrap_or(100);
        let covariates = field::<CovariateLaw>(&map, "covariates", &mut errors);
        let dim = field::<usize>(&map, "dim", &mut errors).or(match &covariates {
            Some(CovariateLaw::Gaussian { mean, .. }) => Some(mean.len()),
            _ => None,
        });
        if dim.is_none() && !map.contains_key("dim") {
            errors.push("missing `dim` (required for uniform covariates)".into());
        }
        let model = field::<ModelConfig>(&map, "model", &mut errors);
        let nominal = field::<Vec<f64>>(&map, "nominal_theta", &mut errors);
        let criteria =
            field::<Vec<Criterion>>(&map, "criteria", &mut errors).unwrap_or(vec![Criterion::D, Criterion::A]);
        let samplers = field::<Vec<Sampler>>(&map, "samplers", &mut errors)
            .unwrap_or(vec![Sampler::Odb, Sampler::Iboss, Sampler::Srs, Sampler::Pps]);
        let solver = field::<SolverSettings>(&map, "solver", &mut errors).unwrap_or_default();
        let grid = field::<usize>(&map, "grid_resolution", &mut errors);
        let distance = field::<Distance>(&map, "distance", &mut errors).unwrap_or_default();

        let (Some(seed), Some(big_n), Some(n), Some(reps), Some(covariates), Some(dim), Some(model)) =
            (seed, big_n, n, reps, covariates, dim, model)
        else {
            return Err(OdbError::Config(errors));
        };
        let cfg = StudyConfig {
            seed,
            population_size: big_n,
            n,
            replications: reps,
            srs_pps_repeats: repeats,
            dim,
            covariates,
            model,
            nominal_theta: nominal,
            criteria,
            samplers,
            solver,
            grid_resolution: grid,
            distance,
        };
        errors.extend(cfg.problems());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(OdbError::Config(errors))
        }
    }

    /// Semantic checks; empty when the config is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut e = Vec::new();
        let basis = FeatureBasis::new(self.model.basis.clone(), self.dim);
        let q = match &basis {
            Ok(b) => b.len(),
            Err(err) => {
                e.push(format!("model.basis: {err}"));
                0
            }
        };
        if self.replications < 1 {
            e.push("R must be at least 1".into());
        }
        if self.n > self.population_size {
            e.push(format!("n = {} exceeds N = {}", self.n, self.population_size));
        }
        if q > 0 && self.n < q {
            e.push(format!("n = {} is below the parameter count q = {q}", self.n));
        }
        if q > 0 && self.model.theta.len() != q {
            e.push(format!("model.theta has {} entries, the basis has {q}", self.model.theta.len()));
        }
        if let Some(nom) = &self.nominal_theta {
            if q > 0 && nom.len() != q {
                e.push(format!("nominal_theta has {} entries, the basis has {q}", nom.len()));
            }
        }
        if !(self.model.sigma2 >= 0.0 && self.model.sigma2.is_finite()) {
            e.push("model.sigma2 must be finite and non-negative".into());
        }
        match &self.covariates {
            CovariateLaw::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && high > low) {
                    e.push("covariates.uniform needs finite low < high".into());
                }
            }
            CovariateLaw::Gaussian { mean, covariance } => {
                if mean.len() != self.dim {
                    e.push(format!("covariates.gaussian.mean has {} entries, dim is {}", mean.len(), self.dim));
                }
                if covariance.len() != mean.len() || covariance.iter().any(|r| r.len() != mean.len()) {
                    e.push("covariates.gaussian.covariance must be square and match the mean".into());
                } else {
                    let m = DMatrix::from_fn(mean.len(), mean.len(), |i, j| covariance[i][j]);
                    if m.clone().cholesky().is_none() {
                        e.push("covariates.gaussian.covariance is not positive definite".into());
                    }
                }
            }
        }
        if self.criteria.is_empty() {
            e.push("criteria must not be empty".into());
        }
        if self.samplers.is_empty() {
            e.push("samplers must not be empty".into());
        }
        let mut seen = self.samplers.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.samplers.len() {
            e.push("samplers contains duplicates".into());
        }
        if self.srs_pps_repeats < 1
            && self.samplers.iter().any(|s| matches!(s, Sampler::Srs | Sampler::Pps))
        {
            e.push("srs_pps_repeats must be at least 1".into());
        }
        if let Some(g) = self.grid_resolution {
            if g < 2 {
                e.push("grid_resolution must be at least 2".into());
            }
        }
        if let Err(err) = self.solver.validate() {
            e.push(format!("solver: {err}"));
        }
        e
    }

    pub fn basis(&self) -> Result<FeatureBasis> {
        FeatureBasis::new(self.model.basis.clone(), self.dim)
    }

    /// The true model. `σ² = 0` is stored as 1 here: it only scales
    /// information and never enters a design or an efficiency.
    pub fn true_model(&self) -> Result<ModelSpec> {
        let s2 = if self.model.sigma2 > 0.0 { self.model.sigma2 } else { 1.0 };
        ModelSpec::new(self.basis()?, self.model.family, self.model.theta.clone(), s2)
    }

    /// The model with the nominal `θ` used for local information.
    pub fn nominal_model(&self) -> Result<ModelSpec> {
        let mut m = self.true_model()?;
        if let Some(t) = &self.nominal_theta {
            m.theta = t.clone();
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------- generation

/// The study's covariate table, drawn from the `("X", 0, 0)` stream.
pub fn generate_covariates(cfg: &StudyConfig) -> Result<Dataset> {
    let mut rng = seeds::stream(cfg.seed, "X", 0, 0);
    let (big_n, p) = (cfg.population_size, cfg.dim);
    let mut flat = Vec::with_capacity(big_n * p);
    match &cfg.covariates {
        CovariateLaw::Uniform { low, high } => {
            for _ in 0..big_n * p {
                flat.push(low + (high - low) * rng.random::<f64>());
            }
        }
        CovariateLaw::Gaussian { mean, covariance } => {
            let m = DMatrix::from_fn(p, p, |i, j| covariance[i][j]);
            let l = m
                .cholesky()
                .ok_or_else(|| OdbError::InvalidInput("covariance is not positive definite".into()))?
                .l();
            let mut z = DVector::zeros(p);
            for _ in 0..big_n {
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let x = &l * &z;
                flat.extend(x.iter().zip(mean).map(|(a, b)| a + b));
            }
        }
    }
    Dataset::from_flat(big_n, p, flat, None)
}

/// Responses for one replication from the `("Y", replication, 0)` stream,
/// generated from the raw covariates and the true `θ`.
pub fn generate_responses(cfg: &StudyConfig, covariates: &Dataset, replication: usize) -> Result<Dataset> {
    let model = cfg.true_model()?;
    let mut rng = seeds::stream(cfg.seed, "Y", replication as u64, 0);
    let q = model.n_params();
    let sd = cfg.model.sigma2.sqrt();
    let mut f = vec![0.0; q];
    let mut y = Vec::with_capacity(covariates.n_rows());
    for row in covariates.rows() {
        model.basis.expand_into(row, &mut f);
        let eta = model.eta(&f);
        y.push(match model.family {
            Family::LinearGaussian => {
                let e: f64 = rng.sample(StandardNormal);
                eta + sd * e
            }
            Family::Logistic => {
                if rng.random::<f64>() < logistic(eta) {
                    1.0
                } else {
                    0.0
                }
            }
        });
    }
    covariates.with_response(y)
}

/// Covariates plus the responses of `replication`.
pub fn generate_population(cfg: &StudyConfig, replication: usize) -> Result<Dataset> {
    generate_responses(cfg, &generate_covariates(cfg)?, replication)
}

// ---------------------------------------------------------------- summaries

/// Mean, unbiased covariance, and the covariance's determinant and trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub count: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub determinant: f64,
    pub trace: f64,
}

pub fn summarize(estimates: &[Vec<f64>]) -> Result<MomentSummary> {
    let count = estimates.len();
    if count < 2 {
        return Err(OdbError::InvalidInput(format!("need at least 2 estimates, got {count}")));
    }
    let q = estimates[0].len();
    if estimates.iter().any(|e| e.len() != q) {
        return Err(OdbError::InvalidInput("estimates differ in length".into()));
    }
    let nf = count as f64;
    let mean: Vec<f64> = (0..q).map(|j| estimates.iter().map(|e| e[j]).sum::<f64>() / nf).collect();
    let mut cov = DMatrix::zeros(q, q);
    for e in estimates {
        for i in 0..q {
            for j in 0..q {
                cov[(i, j)] += (e[i] - mean[i]) * (e[j] - mean[j]);
            }
        }
    }
    cov /= nf - 1.0;
    Ok(MomentSummary {
        count,
        mean,
        covariance: (0..q).map(|i| cov.row(i).iter().copied().collect()).collect(),
        determinant: Lu::factor(&cov).det().max(0.0),
        trace: cov.trace(),
    })
}

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n − 1)p`), on sorted input.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `[min, q1, median, q3, max]`.
pub fn five_numbers(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(OdbError::InvalidInput("no values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok([s[0], quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.75), s[s.len() - 1]])
}

// ---------------------------------------------------------------- oracle

/// Criterion of `FₛᵀFₛ` (weighted features, design coordinates): `det` for
/// D, `−tr(·)⁻¹` for A; `None` when singular.
pub fn subset_criterion(
    data: &Dataset,
    rows: &[usize],
    model: &ModelSpec,
    transform: &BoxTransform,
    c: Criterion,
) -> Result<Option<f64>> {
    let m = info_matrix_of_rows(data, rows, model, transform)?;
    let g = m.matrix() * rows.len() as f64;
    let lu = Lu::factor(&g);
    if lu.is_singular() {
        return Ok(None);
    }
    Ok(Some(match c {
        Criterion::D => lu.det(),
        Criterion::A => -symmetric_inverse(&g)?.trace(),
    }))
}

/// Largest number of subsets the exhaustive oracle will visit.
pub const ORACLE_BUDGET: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// The subset of size `n` maximizing the criterion of `FₛᵀFₛ`, by
/// enumerating all of them in lexicographic order (first best wins).
pub fn brute_force_best_sample(
    data: &Dataset,
    model: &ModelSpec,
    transform: &BoxTransform,
    c: Criterion,
    n: usize,
) -> Result<SampleSelection> {
    let big_n = data.n_rows();
    if n == 0 || n > big_n {
        return Err(OdbError::SampleTooLarge { n, available: big_n });
    }
    let total = binomial(big_n, n);
    if total > ORACLE_BUDGET {
        return Err(OdbError::BudgetExceeded(format!(
            "C({big_n}, {n}) = {total} subsets exceed {ORACLE_BUDGET}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if let Some(v) = subset_criterion(data, &idx, model, transform, c)? {
            if best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, idx.clone()));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                let (value, rows) = best.ok_or(OdbError::Singular)?;
                return Ok(SampleSelection {
                    rows,
                    sampler: Sampler::Exchange,
                    seed: None,
                    metadata: serde_json::json!({ "oracle": true, "criterion": c, "value": value, "subsets": total as u64 }),
                });
            }
            i -= 1;
            if idx[i] < big_n - n + i {
                idx[i] += 1;
                for j in i + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

// ---------------------------------------------------------------- study

/// Everything fixed across replications.
pub struct StudyContext {
    pub config: StudyConfig,
    pub covariates: Dataset,
    pub transform: BoxTransform,
    pub model: ModelSpec,
    pub designs: BTreeMap<Criterion, SolvedDesign>,
    ideals: BTreeMap<Criterion, IdealInfo>,
    pub dataset_efficiency: BTreeMap<Criterion, f64>,
    /// Deterministic selections by label (`ODB-D`, `ODB-A`, `IBOSS`).
    pub fixed: Vec<(String, Result<SampleSelection, String>)>,
    pps: Option<Result<PpsSampler, String>>,
}

/// Label of the ODB sampler driven by criterion `c`.
pub fn odb_label(c: Criterion) -> String {
    format!("ODB-{c}")
}

impl StudyContext {
    pub fn new(config: StudyConfig) -> Result<Self> {
        let errs = config.problems();
        if !errs.is_empty() {
            return Err(OdbError::Config(errs));
        }
        let covariates = generate_covariates(&config)?;
        let transform = BoxTransform::fit(&covariates)?;
        let model = config.nominal_model()?;
        let candidates = match config.grid_resolution {
            Some(g) => CandidateSet::grid(config.dim, g)?,
            None => CandidateSet::default_for(&model.basis, Some((&covariates, &transform)))?,
        };
        let tol = config.solver.tolerance;
        let m_data = info_matrix_of_dataset(&covariates, &model, &transform)?;
        let mut designs = BTreeMap::new();
        let mut ideals = BTreeMap::new();
        let mut dataset_efficiency = BTreeMap::new();
        // both criteria are always solved: every selection reports D and A efficiency
        for c in [Criterion::D, Criterion::A] {
            let solved = solve_continuous_design(&candidates, &model, c, &config.solver)?;
            let ideal = ideal_info_matrix(&solved.design, &model)?;
            dataset_efficiency.insert(c, ideal.efficiency(&m_data, c, tol)?);
            designs.insert(c, solved);
            ideals.insert(c, ideal);
        }
        let mut fixed = Vec::new();
        for s in &config.samplers {
            match s {
                Sampler::Odb => {
                    for &c in &config.criteria {
                        let sel = odb_select_with_design(
                            &covariates,
                            &model,
                            &transform,
                            &designs[&c],
                            config.n,
                            config.distance,
                        );
                        fixed.push((odb_label(c), sel.map_err(|e| e.to_string())));
                    }
                }
                Sampler::Iboss => {
                    fixed.push(("IBOSS".into(), iboss_select(&covariates, config.n).map_err(|e| e.to_string())));
                }
                _ => {}
            }
        }
        let pps = config.samplers.contains(&Sampler::Pps).then(|| {
            pps_weights(&covariates, &model, &transform)
                .map(|w| PpsSampler::new(&w))
                .map_err(|e| e.to_string())
        });
        Ok(StudyContext {
            config,
            covariates,
            transform,
            model,
            designs,
            ideals,
            dataset_efficiency,
            fixed,
            pps,
        })
    }

    /// Efficiency of a selection under each criterion, against that
    /// criterion's optimal design.
    pub fn efficiencies(&self, rows: &[usize]) -> Result<BTreeMap<Criterion, f64>> {
        let m = info_matrix_of_rows(&self.covariates, rows, &self.model, &self.transform)?;
        let tol = self.config.solver.tolerance;
        self.ideals
            .iter()
            .map(|(&c, ideal)| Ok((c, ideal.efficiency(&m, c, tol)?)))
            .collect()
    }

    /// Sampler labels in report order.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.config.samplers {
            match s {
                Sampler::Odb => out.extend(self.config.criteria.iter().map(|&c| odb_label(c))),
                other => out.push(other.name().to_string()),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub replication: usize,
    pub repeat: usize,
    pub sampler: String,
    pub coefficient: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyRow {
    pub replication: usize,
    pub sampler: String,
    pub criterion: Criterion,
    pub value: f64,
}

/// A sampler or fit that failed; the study carries on without it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub replication: usize,
    pub repeat: usize,
    pub sampler: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicationOutput {
    pub estimates: Vec<EstimateRow>,
    pub efficiencies: Vec<EfficiencyRow>,
    pub failures: Vec<Failure>,
}

/// One replication: fresh responses, every sampler, every fit.
///
/// Efficiencies of repeated samplers are averaged over the replication's
/// repeats; estimates are recorded per repeat.
pub fn run_replication(ctx: &StudyContext, replication: usize) -> Result<ReplicationOutput> {
    let cfg = &ctx.config;
    let data = generate_responses(cfg, &ctx.covariates, replication)?;
    let true_model = cfg.true_model()?;
    let mut out = ReplicationOutput::default();

    let record = |out: &mut ReplicationOutput, label: &str, repeat: usize, sel: &SampleSelection| {
        match fit(&data, &sel.rows, &true_model) {
            Ok(f) if f.converged => {
                out.estimates.extend(f.theta_hat.iter().enumerate().map(|(j, &v)| EstimateRow {
                    replication,
                    repeat,
                    sampler: label.to_string(),
                    coefficient: j,
                    estimate: v,
                }));
            }
            Ok(_) => out.failures.push(Failure {
                replication,
                repeat,
                sampler: label.to_string(),
                error: "fit did not converge".into(),
            }),
            Err(e) => out.failures.push(Failure {
                replication,
                repeat,
                sampler: label.to_string(),
                error: e.to_string(),
            }),
        }
    };
    let push_eff = |out: &mut ReplicationOutput, label: &str, effs: BTreeMap<Criterion, f64>| {
        for (c, v) in effs {
            out.efficiencies.push(EfficiencyRow {
                replication,
                sampler: label.to_string(),
                criterion: c,
                value: v,
            });
        }
    };
    let fail = |out: &mut ReplicationOutput, label: &str, repeat: usize, e: String| {
        out.failures.push(Failure {
            replication,
            repeat,
            sampler: label.to_string(),
            error: e,
        })
    };

    for label in ctx.labels() {
        if let Some((_, sel)) = ctx.fixed.iter().find(|(l, _)| *l == label) {
            match sel {
                Ok(sel) => {
                    record(&mut out, &label, 0, sel);
                    match ctx.efficiencies(&sel.rows) {
                        Ok(e) => push_eff(&mut out, &label, e),
                        Err(e) => fail(&mut out, &label, 0, e.to_string()),
                    }
                }
                Err(e) => fail(&mut out, &label, 0, e.clone()),
            }
            continue;
        }
        let sampler: Sampler = label.parse()?;
        let repeats = match sampler {
            Sampler::Srs | Sampler::Pps => cfg.srs_pps_repeats,
            _ => 1,
        };
        let mut pps = match (&sampler, &ctx.pps) {
            (Sampler::Pps, Some(Ok(s))) => Some(s.clone()),
            (Sampler::Pps, Some(Err(e))) => {
                fail(&mut out, &label, 0, e.clone());
                continue;
            }
            _ => None,
        };
        let mut sums: BTreeMap<Criterion, f64> = BTreeMap::new();
        let mut counted = 0usize;
        for k in 0..repeats {
            let seed = seeds::derived_u64(cfg.seed, sampler.name(), replication as u64, k as u64);
            let sel = match sampler {
                Sampler::Srs => srs_select(ctx.covariates.n_rows(), cfg.n, seed),
                Sampler::Pps => pps.as_mut().expect("PPS sampler prepared").sample(cfg.n, seed),
                Sampler::Exchange => exchange_select(
                    &ctx.covariates,
                    &ctx.model,
                    &ctx.transform,
                    cfg.criteria[0],
                    cfg.n,
                    seed,
                    &ExchangeSettings::default(),
                ),
                Sampler::Odb | Sampler::Iboss => unreachable!("deterministic samplers are precomputed"),
            };
            let sel = match sel {
                Ok(s) => s,
                Err(e) => {
                    fail(&mut out, &label, k, e.to_string());
                    continue;
                }
            };
            record(&mut out, &label, k, &sel);
            match ctx.efficiencies(&sel.rows) {
                Ok(e) => {
                    for (c, v) in e {
                        *sums.entry(c).or_default() += v;
                    }
                    counted += 1;
                }
                Err(e) => fail(&mut out, &label, k, e.to_string()),
            }
        }
        if counted > 0 {
            push_eff(
                &mut out,
                &label,
                sums.into_iter().map(|(c, s)| (c, s / counted as f64)).collect(),
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSummary {
    pub criterion: Criterion,
    pub certified: bool,
    pub support_size: usize,
    pub max_sensitivity: f64,
    pub bound: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerSummary {
    pub sampler: String,
    /// Mean over replications of the per-replication efficiency.
    pub mean_efficiency: BTreeMap<String, f64>,
    /// Monte Carlo moments of the pooled estimates; `None` with fewer than
    /// two converged fits.
    pub estimates: Option<MomentSummary>,
    pub failures: usize,
}

/// The study's summary, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub seed: u64,
    #[serde(rename = "N")]
    pub population_size: usize,
    pub n: usize,
    #[serde(rename = "R")]
    pub replications: usize,
    pub dataset_efficiency: BTreeMap<String, f64>,
    pub designs: Vec<DesignSummary>,
    pub samplers: Vec<SamplerSummary>,
    pub failures: Vec<Failure>,
}

impl StudyReport {
    pub fn sampler(&self, label: &str) -> Option<&SamplerSummary> {
        self.samplers.iter().find(|s| s.sampler == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxplotRow {
    pub sampler: String,
    pub coefficient: usize,
    pub quantiles: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub report: StudyReport,
    pub estimates: Vec<EstimateRow>,
    pub efficiencies: Vec<EfficiencyRow>,
    pub boxplots: Vec<BoxplotRow>,
}

/// Runs every replication on a pool of `jobs` threads and summarizes.
/// `progress(done, total)` is called after each replication completes.
pub fn run_study(
    config: StudyConfig,
    jobs: usize,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<StudyOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| OdbError::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        let ctx = StudyContext::new(config)?;
        let total = ctx.config.replications;
        let done = AtomicUsize::new(0);
        let outputs: Vec<Result<ReplicationOutput>> = (0..total)
            .into_par_iter()
            .map(|r| {
                let o = run_replication(&ctx, r);
                progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
                o
            })
            .collect();
        let mut all = ReplicationOutput::default();
        for o in outputs {
            let o = o?;
            all.estimates.extend(o.estimates);
            all.efficiencies.extend(o.efficiencies);
            all.failures.extend(o.failures);
        }
        assemble(&ctx, all)
    })
}

fn assemble(ctx: &StudyContext, all: ReplicationOutput) -> Result<StudyOutput> {
    let q = ctx.model.n_params();
    let mut samplers = Vec::new();
    let mut boxplots = Vec::new();
    for label in ctx.labels() {
        // pooled estimate vectors in (replication, repeat) order
        let mut vectors: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for e in all.estimates.iter().filter(|e| e.sampler == label) {
            vectors.entry((e.replication, e.repeat)).or_insert_with(|| vec![0.0; q])[e.coefficient] = e.estimate;
        }
        let vectors: Vec<Vec<f64>> = vectors.into_values().collect();
        let mut mean_efficiency = BTreeMap::new();
        for c in [Criterion::D, Criterion::A] {
            let vals: Vec<f64> = all
                .efficiencies
                .iter()
                .filter(|e| e.sampler == label && e.criterion == c)
                .map(|e| e.value)
                .collect();
            if !vals.is_empty() {
                mean_efficiency.insert(c.to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        if !vectors.is_empty() {
            for j in 0..q {
                let col: Vec<f64> = vectors.iter().map(|v| v[j]).collect();
                boxplots.push(BoxplotRow {
                    sampler: label.clone(),
                    coefficient: j,
                    quantiles: five_numbers(&col)?,
                });
            }
        }
        samplers.push(SamplerSummary {
            failures: all.failures.iter().filter(|f| f.sampler == label).count(),
            sampler: label,
            mean_efficiency,
            estimates: summarize(&vectors).ok(),
        });
    }
    let designs = ctx
        .designs
        .iter()
        .map(|(&c, s)| DesignSummary {
            criterion: c,
            certified: s.certified,
            support_size: s.design.len(),
            max_sensitivity: s.max_sensitivity,
            bound: s.bound,
            iterations: s.iterations,
        })
        .collect();
    let cfg = &ctx.config;
    Ok(StudyOutput {
        report: StudyReport {
            seed: cfg.seed,
            population_size: cfg.population_size,
            n: cfg.n,
            replications: cfg.replications,
            dataset_efficiency: ctx.dataset_efficiency.iter().map(|(c, v)| (c.to_string(), *v)).collect(),
            designs,
            samplers,
            failures: all.failures,
        },
        estimates: all.estimates,
        efficiencies: all.efficiencies,
        boxplots,
    })
}

impl StudyOutput {
    /// Writes `estimates.csv`, `efficiencies.csv`, `summary.json` and
    /// `boxplot.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("estimates.csv"))?);
        writeln!(w, "replication,repeat,sampler,coefficient,estimate")?;
        for e in &self.estimates {
            writeln!(w, "{},{},{},{},{}", e.replication, e.repeat, e.sampler, e.coefficient, e.estimate)?;
        }
        w.flush()?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("efficiencies.csv"))?);
        writeln!(w, "replication,sampler,criterion,value")?;
        for e in &self.efficiencies {
            writeln!(w, "{},{},{},{}", e.replication, e.sampler, e.criterion, e.value)?;
        }
        w.flush()?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("boxplot.csv"))?);
        writeln!(w, "sampler,coefficient,min,q1,median,q3,max")?;
        for b in &self.boxplots {
            let [a, b1, c, d, e] = b.quantiles;
            writeln!(w, "{},{},{a},{b1},{c},{d},{e}", b.sampler, b.coefficient)?;
        }
        w.flush()?;
        let mut text = serde_json::to_string_pretty(&self.report)?;
        text.push('\n');
        std::fs::write(dir.join("summary.json"), text)?;
        Ok(())
    }
}
