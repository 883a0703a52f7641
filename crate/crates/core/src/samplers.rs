//! Subsample selection: ODB, IBOSS, SRS, leverage PPS and the exchange
//! algorithm. Every sampler returns exactly `n` distinct row indices.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::Dataset;
use crate::design::{
    reduce_support, round_design, solve_continuous_design, CandidateSet, SolvedDesign,
    SolverSettings,
};
use crate::error::{OdbError, Result};
use crate::linalg::{symmetric_inverse, Lu};
use crate::model::{check_dims, info_matrix_of_dataset, Criterion, ModelSpec, ROW_CHUNK};
use crate::transform::BoxTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Sampler {
    Odb,
    Iboss,
    Srs,
    Pps,
    Exchange,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Odb => "ODB",
            Sampler::Iboss => "IBOSS",
            Sampler::Srs => "SRS",
            Sampler::Pps => "PPS",
            Sampler::Exchange => "EXCHANGE",
        }
    }

    /// Whether the sampler consumes a seed.
    pub fn is_random(self) -> bool {
        matches!(self, Sampler::Srs | Sampler::Pps | Sampler::Exchange)
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sampler {
    type Err = OdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ODB" => Ok(Sampler::Odb),
            "IBOSS" => Ok(Sampler::Iboss),
            "SRS" => Ok(Sampler::Srs),
            "PPS" => Ok(Sampler::Pps),
            "EXCHANGE" | "EA" => Ok(Sampler::Exchange),
            _ => Err(OdbError::InvalidInput(format!(
                "unknown sampler `{s}` (expected ODB, IBOSS, SRS, PPS or EXCHANGE)"
            ))),
        }
    }
}

/// Row-matching distance for ODB, measured in feature space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
    /// Uses the inverse sample covariance of the non-intercept features.
    Mahalanobis,
}

impl FromStr for Distance {
    type Err = OdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Distance::Euclidean),
            "mahalanobis" => Ok(Distance::Mahalanobis),
            _ => Err(OdbError::InvalidInput(format!("unknown distance `{s}`"))),
        }
    }
}

/// A drawn subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSelection {
    /// Sorted, distinct row indices.
    pub rows: Vec<usize>,
    pub sampler: Sampler,
    pub seed: Option<u64>,
    pub metadata: serde_json::Value,
}

impl SampleSelection {
    fn new(mut rows: Vec<usize>, sampler: Sampler, seed: Option<u64>, metadata: serde_json::Value) -> Self {
        rows.sort_unstable();
        SampleSelection {
            rows,
            sampler,
            seed,
            metadata,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One `row` column of indices.
    pub fn write_index_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row")?;
        for r in &self.rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    }
}

fn check_n(n: usize, available: usize) -> Result<()> {
    if n == 0 {
        return Err(OdbError::InvalidInput("sample size must be at least 1".into()));
    }
    if n > available {
        return Err(OdbError::SampleTooLarge { n, available });
    }
    Ok(())
}

/// Indices of the `k` smallest keys, ties broken by index.
fn k_smallest(mut keyed: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    keyed.into_iter().map(|(_, i)| i).collect()
}

// ---------------------------------------------------------------- ODB

/// Solves the continuous design on the default candidate set for `model`
/// and selects `n` rows nearest its support.
pub fn odb_select(
    data: &Dataset,
    model: &ModelSpec,
    criterion: Criterion,
    n: usize,
    distance: Distance,
    settings: &SolverSettings,
) -> Result<SampleSelection> {
    let transform = BoxTransform::fit(data)?;
    let candidates = CandidateSet::default_for(&model.basis, Some((data, &transform)))?;
    let solved = solve_continuous_design(&candidates, model, criterion, settings)?;
    odb_select_with_design(data, model, &transform, &solved, n, distance)
}

/// ODB selection for an already solved design.
///
/// A support larger than `n` is first reduced to an information-preserving
/// basic support. The design is rounded to counts `n_j`, and supports are
/// visited in descending weight order (lower index first on ties); each
/// takes the `n_j` untaken rows whose `f(z)` is closest to `f(x_j*)`, ties
/// going to the lower row index.
pub fn odb_select_with_design(
    data: &Dataset,
    model: &ModelSpec,
    transform: &BoxTransform,
    solved: &SolvedDesign,
    n: usize,
    distance: Distance,
) -> Result<SampleSelection> {
    check_dims(data, model, transform)?;
    let big_n = data.n_rows();
    check_n(n, big_n)?;
    let base_meta = json!({
        "criterion": solved.criterion,
        "certified": solved.certified,
        "max_sensitivity": solved.max_sensitivity,
    });
    if n == big_n {
        let mut meta = base_meta;
        meta["exhausted"] = json!(true);
        return Ok(SampleSelection::new((0..big_n).collect(), Sampler::Odb, None, meta));
    }

    let mut design = solved.design.clone();
    let reduced = design.len() > n;
    if reduced {
        design = reduce_support(&design, model)?;
    }
    let alloc = round_design(&design, n)?;
    let q = model.n_params();
    let basis = &model.basis;

    let metric = match distance {
        Distance::Euclidean => None,
        Distance::Mahalanobis => Some(feature_precision(data, model, transform)?),
    };

    let mut order: Vec<usize> = (0..design.len()).collect();
    let w = design.weights();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));

    let mut taken = vec![false; big_n];
    let mut rows = Vec::with_capacity(n);
    let mut assigned = vec![0usize; design.len()];
    for &j in &order {
        let target = basis.expand(&alloc.support[j])?;
        let count = alloc.counts[j];
        let keyed: Vec<(f64, usize)> = (0..big_n)
            .into_par_iter()
            .with_min_len(ROW_CHUNK)
            .filter(|&i| !taken[i])
            .map(|i| {
                let mut z = vec![0.0; data.dim()];
                let mut f = vec![0.0; q];
                transform.apply_into(data.row(i), &mut z);
                basis.expand_into(&z, &mut f);
                let d = match &metric {
                    None => f.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum(),
                    Some(p) => {
                        let diff = DVector::from_iterator(
                            q - 1,
                            f[1..].iter().zip(&target[1..]).map(|(a, b)| a - b),
                        );
                        diff.dot(&(p * &diff))
                    }
                };
                (d, i)
            })
            .collect();
        for i in k_smallest(keyed, count) {
            taken[i] = true;
            rows.push(i);
        }
        assigned[j] = count;
    }

    let mut meta = base_meta;
    meta["support"] = json!(alloc.support);
    meta["weights"] = json!(design.weights());
    meta["counts"] = json!(assigned);
    meta["support_reduced"] = json!(reduced);
    meta["distance"] = json!(distance);
    Ok(SampleSelection::new(rows, Sampler::Odb, None, meta))
}

/// Inverse sample covariance of `f(z)` without the intercept.
fn feature_precision(data: &Dataset, model: &ModelSpec, transform: &BoxTransform) -> Result<DMatrix<f64>> {
    let q = model.n_params();
    let r = q - 1;
    let big_n = data.n_rows();
    if big_n < 2 {
        return Err(OdbError::InvalidInput("Mahalanobis distance needs at least two rows".into()));
    }
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..big_n)
        .collect::<Vec<_>>()
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut s = vec![0.0; r];
            let mut ss = vec![0.0; r * r];
            let mut z = vec![0.0; data.dim()];
            let mut f = vec![0.0; q];
            for &i in chunk {
                transform.apply_into(data.row(i), &mut z);
                model.basis.expand_into(&z, &mut f);
                for a in 0..r {
                    s[a] += f[a + 1];
                    for b in 0..r {
                        ss[a * r + b] += f[a + 1] * f[b + 1];
                    }
                }
            }
            (s, ss)
        })
        .collect();
    let mut s = vec![0.0; r];
    let mut ss = vec![0.0; r * r];
    for (ps, pss) in partials {
        s.iter_mut().zip(ps).for_each(|(a, b)| *a += b);
        ss.iter_mut().zip(pss).for_each(|(a, b)| *a += b);
    }
    let nf = big_n as f64;
    let cov = DMatrix::from_fn(r, r, |a, b| (ss[a * r + b] - s[a] * s[b] / nf) / (nf - 1.0));
    symmetric_inverse(&cov)
}

// ---------------------------------------------------------------- IBOSS

/// Per `(covariate, end)` counts: `⌊n / 2p⌋` each, the remainder handed out
/// one at a time in the order small₁, large₁, small₂, large₂, ….
pub fn iboss_counts(n: usize, p: usize) -> Vec<(usize, usize)> {
    let base = n / (2 * p);
    let mut rem = n % (2 * p);
    (0..p)
        .map(|_| {
            let mut c = [base, base];
            for v in c.iter_mut() {
                if rem > 0 {
                    *v += 1;
                    rem -= 1;
                }
            }
            (c[0], c[1])
        })
        .collect()
}

/// Information-based optimal subdata selection on raw covariates: for each
/// covariate in turn, the untaken rows with the smallest and the largest
/// values.
pub fn iboss_select(data: &Dataset, n: usize) -> Result<SampleSelection> {
    let big_n = data.n_rows();
    check_n(n, big_n)?;
    let p = data.dim();
    let counts = iboss_counts(n, p);
    let mut taken = vec![false; big_n];
    let mut rows = Vec::with_capacity(n);
    for (j, &(small, large)) in counts.iter().enumerate() {
        let free: Vec<usize> = (0..big_n).filter(|&i| !taken[i]).collect();
        let lo = k_smallest(free.iter().map(|&i| (data.row(i)[j], i)).collect(), small);
        for &i in &lo {
            taken[i] = true;
        }
        rows.extend(lo);
        let hi = k_smallest(
            free.iter()
                .filter(|&&i| !taken[i])
                .map(|&i| (-data.row(i)[j], i))
                .collect(),
            large,
        );
        for &i in &hi {
            taken[i] = true;
        }
        rows.extend(hi);
    }
    let meta = json!({ "counts": counts.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>() });
    Ok(SampleSelection::new(rows, Sampler::Iboss, None, meta))
}

// ---------------------------------------------------------------- SRS

/// Simple random sample without replacement.
pub fn srs_select(big_n: usize, n: usize, seed: u64) -> Result<SampleSelection> {
    check_n(n, big_n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = index::sample(&mut rng, big_n, n).into_vec();
    Ok(SampleSelection::new(rows, Sampler::Srs, Some(seed), serde_json::Value::Null))
}

// ---------------------------------------------------------------- PPS

/// Leverage-proportional selection probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PpsWeights {
    probabilities: Vec<f64>,
}

impl PpsWeights {
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// `p_i = f(z_i)ᵀ(FᵀF)⁻¹f(z_i) / q`, using unweighted features of the
/// box-transformed rows. The leverages are divided by their computed sum
/// (which equals `q` up to rounding) so the probabilities sum to one.
pub fn pps_weights(data: &Dataset, model: &ModelSpec, transform: &BoxTransform) -> Result<PpsWeights> {
    let plain = ModelSpec::linear(model.basis.clone());
    let m = info_matrix_of_dataset(data, &plain, transform)?;
    if m.is_singular() {
        return Err(OdbError::Singular);
    }
    let minv = symmetric_inverse(m.matrix())?;
    let q = model.n_params();
    let big_n = data.n_rows();
    let lev: Vec<f64> = (0..big_n)
        .into_par_iter()
        .with_min_len(ROW_CHUNK)
        .map(|i| {
            let mut z = vec![0.0; data.dim()];
            let mut f = vec![0.0; q];
            transform.apply_into(data.row(i), &mut z);
            model.basis.expand_into(&z, &mut f);
            let f = DVector::from_vec(f);
            f.dot(&(&minv * &f)) / big_n as f64
        })
        .collect();
    let total: f64 = lev.chunks(ROW_CHUNK).map(|c| c.iter().sum::<f64>()).sum();
    Ok(PpsWeights {
        probabilities: lev.into_iter().map(|v| v / total).collect(),
    })
}

/// A sum tree over the probabilities that draws without replacement and
/// restores itself after each sample, so repeated draws cost `O(n log N)`.
#[derive(Debug, Clone)]
pub struct PpsSampler {
    size: usize,
    len: usize,
    tree: Vec<f64>,
    positive: usize,
}

impl PpsSampler {
    pub fn new(weights: &PpsWeights) -> Self {
        let len = weights.probabilities.len();
        let size = len.next_power_of_two();
        let mut tree = vec![0.0; 2 * size];
        tree[size..size + len].copy_from_slice(&weights.probabilities);
        for i in (1..size).rev() {
            tree[i] = tree[2 * i] + tree[2 * i + 1];
        }
        let positive = weights.probabilities.iter().filter(|&&p| p > 0.0).count();
        PpsSampler {
            size,
            len,
            tree,
            positive,
        }
    }

    fn set(&mut self, i: usize, v: f64) {
        let mut k = self.size + i;
        self.tree[k] = v;
        while k > 1 {
            k /= 2;
            self.tree[k] = self.tree[2 * k] + self.tree[2 * k + 1];
        }
    }

    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.size {
            let left = self.tree[2 * k];
            if u < left || self.tree[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        k - self.size
    }

    /// `n` sequential draws, each proportional to the remaining
    /// probabilities.
    pub fn sample(&mut self, n: usize, seed: u64) -> Result<SampleSelection> {
        check_n(n, self.len)?;
        if n > self.positive {
            return Err(OdbError::InvalidInput(format!(
                "only {} rows have positive selection probability",
                self.positive
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::with_capacity(n);
        while picked.len() < n {
            let u = rng.random::<f64>() * self.tree[1];
            let i = self.find(u);
            let v = self.tree[self.size + i];
            if v <= 0.0 {
                // landed on an exhausted leaf through rounding; redraw
                continue;
            }
            picked.push((i, v));
            self.set(i, 0.0);
        }
        for &(i, v) in picked.iter().rev() {
            self.set(i, v);
        }
        let rows = picked.into_iter().map(|(i, _)| i).collect();
        Ok(SampleSelection::new(rows, Sampler::Pps, Some(seed), serde_json::Value::Null))
    }
}

pub fn pps_select(weights: &PpsWeights, n: usize, seed: u64) -> Result<SampleSelection> {
    PpsSampler::new(weights).sample(n, seed)
}

// ---------------------------------------------------------------- exchange

/// Limits for [`exchange_select`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeSettings {
    pub max_cycles: usize,
    pub max_restarts: usize,
    /// Largest allowed `N · n`.
    pub budget: u64,
}

impl Default for ExchangeSettings {
    fn default() -> Self {
        ExchangeSettings {
            max_cycles: 1000,
            max_restarts: 50,
            budget: 100_000_000,
        }
    }
}

/// Criterion of an unnormalized `FᵀF`-type matrix: `ln det` for D,
/// `−tr(·)⁻¹` for A. `None` when singular.
fn raw_criterion(m: &DMatrix<f64>, c: Criterion) -> Option<f64> {
    let lu = Lu::factor(m);
    if lu.is_singular() {
        return None;
    }
    match c {
        Criterion::D => lu.log_abs_det().ok(),
        Criterion::A => symmetric_inverse(m).ok().map(|i| -i.trace()),
    }
}

/// The exchange algorithm: from a random start, repeatedly add the row
/// that most improves the criterion and drop the row whose removal hurts
/// least, until the dropped row is the one just added.
pub fn exchange_select(
    data: &Dataset,
    model: &ModelSpec,
    transform: &BoxTransform,
    criterion: Criterion,
    n: usize,
    seed: u64,
    settings: &ExchangeSettings,
) -> Result<SampleSelection> {
    check_dims(data, model, transform)?;
    let big_n = data.n_rows();
    check_n(n, big_n)?;
    if (big_n as u64).saturating_mul(n as u64) > settings.budget {
        return Err(OdbError::BudgetExceeded(format!(
            "N·n = {} exceeds the exchange budget {}",
            big_n as u64 * n as u64,
            settings.budget
        )));
    }
    let q = model.n_params();
    let mut feats = vec![0.0; big_n * q];
    let mut z = vec![0.0; data.dim()];
    for (i, out) in feats.chunks_exact_mut(q).enumerate() {
        transform.apply_into(data.row(i), &mut z);
        model.weighted_features_into(&z, out);
    }
    let feat = |i: usize| DVector::from_column_slice(&feats[i * q..(i + 1) * q]);
    let gram = |rows: &[usize]| {
        let mut m = DMatrix::zeros(q, q);
        for &i in rows {
            let a = feat(i);
            m += &a * a.transpose();
        }
        m
    };

    if n == big_n {
        let rows: Vec<usize> = (0..big_n).collect();
        let value = raw_criterion(&gram(&rows), criterion);
        let meta = json!({ "cycles": 0, "start_value": value, "final_value": value });
        return Ok(SampleSelection::new(rows, Sampler::Exchange, Some(seed), meta));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = None;
    for _ in 0..settings.max_restarts {
        let rows = index::sample(&mut rng, big_n, n).into_vec();
        if let Some(v) = raw_criterion(&gram(&rows), criterion) {
            start = Some((rows, v));
            break;
        }
    }
    let (mut rows, start_value) = start.ok_or(OdbError::NoNonsingularStart {
        attempts: settings.max_restarts,
    })?;
    let mut in_sample = vec![false; big_n];
    for &i in &rows {
        in_sample[i] = true;
    }

    let mut cycles = 0;
    let mut converged = false;
    while cycles < settings.max_cycles {
        cycles += 1;
        let m = gram(&rows);
        let minv = symmetric_inverse(&m)?;
        // add: D maximizes aᵀM⁻¹a; A maximizes aᵀM⁻²a / (1 + aᵀM⁻¹a)
        let gain = |i: usize| {
            let a = feat(i);
            let g = &minv * &a;
            let d = a.dot(&g);
            match criterion {
                Criterion::D => d,
                Criterion::A => g.dot(&g) / (1.0 + d),
            }
        };
        let add = (0..big_n)
            .into_par_iter()
            .with_min_len(ROW_CHUNK)
            .filter(|&i| !in_sample[i])
            .map(|i| (gain(i), i))
            .reduce(
                || (f64::NEG_INFINITY, usize::MAX),
                |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            )
            .1;
        // remove from s ∪ {add}: D minimizes bᵀM'⁻¹b; A minimizes the trace increase
        let a = feat(add);
        let m_plus = &m + &a * a.transpose();
        let pinv = symmetric_inverse(&m_plus)?;
        let mut best = (f64::INFINITY, usize::MAX);
        for &i in rows.iter().chain(std::iter::once(&add)) {
            let b = feat(i);
            let g = &pinv * &b;
            let d = b.dot(&g);
            let loss = match criterion {
                Criterion::D => d,
                Criterion::A => {
                    if 1.0 - d <= 1e-12 {
                        f64::INFINITY
                    } else {
                        g.dot(&g) / (1.0 - d)
                    }
                }
            };
            if loss < best.0 || (loss == best.0 && i < best.1) {
                best = (loss, i);
            }
        }
        let remove = best.1;
        if remove == add {
            converged = true;
            break;
        }
        in_sample[remove] = false;
        in_sample[add] = true;
        let pos = rows.iter().position(|&r| r == remove).expect("removed row is in the sample");
        rows[pos] = add;
    }
    let final_value = raw_criterion(&gram(&rows), criterion);
    let meta = json!({
        "criterion": criterion,
        "cycles": cycles,
        "converged": converged,
        "start_value": start_value,
        "final_value": final_value,
    });
    Ok(SampleSelection::new(rows, Sampler::Exchange, Some(seed), meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::FeatureBasis;
    use approx::assert_relative_eq;
    use std::collections::HashMap;

    fn line_data(xs: &[f64]) -> Dataset {
        Dataset::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>(), None).unwrap()
    }

    fn line_model() -> ModelSpec {
        ModelSpec::linear(FeatureBasis::linear(1).unwrap())
    }

    #[test]
    fn odb_five_point_line() {
        let ds = line_data(&[-1.0, -0.8, 0.0, 0.7, 1.0]);
        let s = odb_select(&ds, &line_model(), Criterion::D, 2, Distance::Euclidean, &SolverSettings::default())
            .unwrap();
        assert_eq!(s.rows, vec![0, 4]);
        assert_eq!(s.metadata["counts"], json!([1, 1]));
    }

    #[test]
    fn odb_exhaustion() {
        let ds = line_data(&[-1.0, -0.8, 0.0, 0.7, 1.0]);
        let s = odb_select(&ds, &line_model(), Criterion::D, 5, Distance::Euclidean, &SolverSettings::default())
            .unwrap();
        assert_eq!(s.rows, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn odb_mahalanobis_and_too_large() {
        let ds = line_data(&[-1.0, -0.8, 0.0, 0.7, 1.0]);
        let s = odb_select(&ds, &line_model(), Criterion::D, 2, Distance::Mahalanobis, &SolverSettings::default())
            .unwrap();
        assert_eq!(s.rows, vec![0, 4]);
        assert!(matches!(
            odb_select(&ds, &line_model(), Criterion::D, 6, Distance::Euclidean, &SolverSettings::default()),
            Err(OdbError::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn iboss_one_dim() {
        let ds = line_data(&[5.0, 1.0, 9.0, 3.0, 7.0]);
        let s = iboss_select(&ds, 4).unwrap();
        // rows of 1, 3 (smallest) and 9, 7 (largest)
        assert_eq!(s.rows, vec![1, 2, 3, 4]);
        assert_eq!(iboss_select(&ds, 5).unwrap().rows, vec![0, 1, 2, 3, 4]);
        assert!(iboss_select(&ds, 6).is_err());
    }

    #[test]
    fn iboss_remainder_rule() {
        assert_eq!(iboss_counts(5, 2), vec![(2, 1), (1, 1)]);
        assert_eq!(iboss_counts(8, 2), vec![(2, 2), (2, 2)]);
        assert_eq!(iboss_counts(7, 2), vec![(2, 2), (2, 1)]);
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * 7 % 10) as f64]).collect();
        let ds = Dataset::from_rows(&rows, None).unwrap();
        let s = iboss_select(&ds, 5).unwrap();
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn srs_basics() {
        assert_eq!(srs_select(5, 5, 3).unwrap().rows, vec![0, 1, 2, 3, 4]);
        assert!(srs_select(5, 0, 3).is_err());
        assert!(srs_select(5, 6, 3).is_err());
        assert_eq!(srs_select(100, 10, 9).unwrap(), srs_select(100, 10, 9).unwrap());
    }

    #[test]
    fn srs_pairs_uniform() {
        let draws = 100_000;
        let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
        for s in 0..draws {
            *freq.entry(srs_select(5, 2, s).unwrap().rows).or_default() += 1;
        }
        assert_eq!(freq.len(), 10);
        for (pair, c) in freq {
            let f = c as f64 / draws as f64;
            assert!((f - 0.1).abs() <= 0.005, "{pair:?}: {f}");
        }
    }

    #[test]
    fn pps_two_rows() {
        let ds = line_data(&[0.0, 1.0]);
        // identity transform keeps x = {0, 1}
        let t = BoxTransform::new(vec![(-1.0, 1.0)]).unwrap();
        let w = pps_weights(&ds, &line_model(), &t).unwrap();
        assert_relative_eq!(w.probabilities()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(w.probabilities()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pps_identical_rows_uniform() {
        let basis = FeatureBasis::linear(1).unwrap();
        let model = ModelSpec::linear(basis);
        let ds = line_data(&[-1.0, 1.0, -1.0, 1.0]);
        let t = BoxTransform::fit(&ds).unwrap();
        let w = pps_weights(&ds, &model, &t).unwrap();
        for p in w.probabilities() {
            assert_relative_eq!(*p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn pps_sums_to_one_and_draws_distinct() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![((i * 37) % 101) as f64, ((i * 13) % 17) as f64]).collect();
        let ds = Dataset::from_rows(&rows, None).unwrap();
        let t = BoxTransform::fit(&ds).unwrap();
        let model = ModelSpec::linear(FeatureBasis::quadratic(2).unwrap());
        let w = pps_weights(&ds, &model, &t).unwrap();
        let s: f64 = w.probabilities().iter().sum();
        assert!((s - 1.0).abs() < 1e-10);
        let mut sampler = PpsSampler::new(&w);
        let a = sampler.sample(50, 1).unwrap();
        let b = sampler.sample(50, 1).unwrap();
        assert_eq!(a, b, "sampler must restore its tree");
        let mut r = a.rows.clone();
        r.dedup();
        assert_eq!(r.len(), 50);
        assert_eq!(pps_select(&w, 200, 5).unwrap().rows, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn exchange_line() {
        let ds = line_data(&[-1.0, -0.5, 0.5, 1.0]);
        let t = BoxTransform::fit(&ds).unwrap();
        for seed in 0..10 {
            let s = exchange_select(&ds, &line_model(), &t, Criterion::D, 2, seed, &ExchangeSettings::default())
                .unwrap();
            assert_eq!(s.rows, vec![0, 3], "seed {seed}");
        }
        let all = exchange_select(&ds, &line_model(), &t, Criterion::D, 4, 0, &ExchangeSettings::default()).unwrap();
        assert_eq!(all.rows, vec![0, 1, 2, 3]);
    }

    #[test]
    fn exchange_improves_on_start() {
        let model = ModelSpec::linear(FeatureBasis::linear(2).unwrap());
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random(), rng.random()]).collect();
            let ds = Dataset::from_rows(&rows, None).unwrap();
            let t = BoxTransform::fit(&ds).unwrap();
            for c in [Criterion::D, Criterion::A] {
                let s = exchange_select(&ds, &model, &t, c, 3, seed, &ExchangeSettings::default()).unwrap();
                let start = s.metadata["start_value"].as_f64().unwrap();
                let end = s.metadata["final_value"].as_f64().unwrap();
                assert!(end >= start - 1e-12, "{c}: {end} < {start}");
            }
        }
    }

    #[test]
    fn exchange_budget_and_singular_start() {
        let ds = line_data(&[-1.0, -0.5, 0.5, 1.0]);
        let t = BoxTransform::fit(&ds).unwrap();
        let tiny = ExchangeSettings { budget: 3, ..Default::default() };
        assert!(matches!(
            exchange_select(&ds, &line_model(), &t, Criterion::D, 2, 0, &tiny),
            Err(OdbError::BudgetExceeded(_))
        ));
        assert!(matches!(
            exchange_select(&ds, &line_model(), &t, Criterion::D, 1, 0, &ExchangeSettings::default()),
            Err(OdbError::NoNonsingularStart { .. })
        ));
    }

    #[test]
    fn selection_json_and_csv() {
        let s = srs_select(10, 3, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(v["sampler"], "SRS");
        assert_eq!(v["seed"], 1);
        let mut buf = Vec::new();
        s.write_index_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("row\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn sampler_parsing() {
        assert_eq!("odb".parse::<Sampler>().unwrap(), Sampler::Odb);
        assert_eq!("Exchange".parse::<Sampler>().unwrap(), Sampler::Exchange);
        assert!("foo".parse::<Sampler>().is_err());
    }
}
