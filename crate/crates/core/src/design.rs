//! Continuous optimal designs over a finite candidate set.
//!
//! The solver is a vertex-direction method: every iteration moves weight
//! toward the candidate with the largest sensitivity, or away from the
//! support point with the smallest one, with an optimal line step (closed
//! form for D, golden-section search for A). It stops once the
//! equivalence-theorem certificate holds:
//!
//! - D: `max_x w(x) f(x)ᵀ M⁻¹ f(x) ≤ (1 + ε) q`
//! - A: `max_x w(x) f(x)ᵀ M⁻² f(x) ≤ (1 + ε) tr M⁻¹`
//!
//! [`round_design`] turns the continuous weights into integer counts with
//! the multiplier rounding rule, and [`reduce_support`] shrinks a support
//! without changing the information matrix when it has more points than the
//! requested sample size.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, FeatureBasis};
use crate::dataset::Dataset;
use crate::error::{OdbError, Result};
use crate::linalg::{null_vector, symmetric_inverse, Lu};
use crate::model::{
    add_outer, efficiency, finish_symmetric, info_matrix_of_design, Criterion, DesignMeasure,
    InfoMatrix, ModelSpec,
};
use crate::transform::BoxTransform;

/// Largest candidate grid the solver will enumerate.
pub const MAX_GRID_POINTS: usize = 1 << 21;

/// How a [`CandidateSet`] was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    Grid { resolution: usize },
    DatasetRows,
    Explicit,
}

/// Finite surrogate for the design space `[-1, 1]^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    mode: CandidateMode,
    dim: usize,
    points: Vec<f64>,
}

impl CandidateSet {
    /// The lattice of `resolution` equally spaced levels per axis on
    /// `[-1, 1]`, first coordinate varying slowest.
    pub fn grid(dim: usize, resolution: usize) -> Result<Self> {
        if dim == 0 || resolution < 2 {
            return Err(OdbError::InvalidInput(
                "grid needs dimension ≥ 1 and resolution ≥ 2".into(),
            ));
        }
        let total = (resolution as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
        if total > MAX_GRID_POINTS as u128 {
            return Err(OdbError::BudgetExceeded(format!(
                "{resolution}^{dim} grid points exceed {MAX_GRID_POINTS}"
            )));
        }
        let levels: Vec<f64> = (0..resolution)
            .map(|i| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64)
            .collect();
        let total = total as usize;
        let mut points = Vec::with_capacity(total * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            points.extend(idx.iter().map(|&i| levels[i]));
            for j in (0..dim).rev() {
                idx[j] += 1;
                if idx[j] < resolution {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(CandidateSet {
            mode: CandidateMode::Grid { resolution },
            dim,
            points,
        })
    }

    /// Box-transformed dataset rows, exact duplicates removed, in order of
    /// first appearance.
    pub fn dataset_rows(data: &Dataset, transform: &BoxTransform) -> Result<Self> {
        let p = data.dim();
        let mut seen = std::collections::HashSet::new();
        let mut points = Vec::new();
        let mut z = vec![0.0; p];
        for row in data.rows() {
            transform.apply_into(row, &mut z);
            for v in z.iter_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
            let key: Vec<u64> = z.iter().map(|v| (v + 0.0).to_bits()).collect();
            if seen.insert(key) {
                points.extend_from_slice(&z);
            }
        }
        Ok(CandidateSet {
            mode: CandidateMode::DatasetRows,
            dim: p,
            points,
        })
    }

    pub fn explicit(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 || points.iter().any(|x| x.len() != dim) {
            return Err(OdbError::InvalidInput("explicit candidates need a common dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(OdbError::InvalidInput("candidates must lie in [-1, 1]^p".into()));
        }
        Ok(CandidateSet {
            mode: CandidateMode::Explicit,
            dim,
            points: points.into_iter().flatten().collect(),
        })
    }

    /// Default candidates for a basis: the 2-level grid for first-order
    /// bases, the 3-level grid for quadratic ones with `p ≤ 8`, a
    /// `(degree + 1)`-level grid for small custom bases, and the
    /// transformed dataset rows otherwise.
    pub fn default_for(basis: &FeatureBasis, data: Option<(&Dataset, &BoxTransform)>) -> Result<Self> {
        let p = basis.dim();
        let grid = match basis.kind() {
            BasisKind::Linear if p <= 16 => Some(2),
            BasisKind::Quadratic if p <= 8 => Some(3),
            BasisKind::Custom(_) => {
                let levels = basis.degree() as usize + 1;
                let total = (levels.max(2) as f64).powi(p as i32);
                (total <= 100_000.0).then_some(levels.max(2))
            }
            _ => None,
        };
        match (grid, data) {
            (Some(g), _) => Self::grid(p, g),
            (None, Some((d, t))) => Self::dataset_rows(d, t),
            (None, None) => Err(OdbError::InvalidInput(
                "no default grid for this basis; supply a dataset or explicit candidates".into(),
            )),
        }
    }

    pub fn mode(&self) -> CandidateMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// Stopping and clean-up parameters for [`solve_continuous_design`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Relative slack `ε` in the equivalence-theorem certificate.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub weight_prune_threshold: f64,
    pub support_merge_distance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: 1e-4,
            max_iterations: 10_000,
            weight_prune_threshold: 1e-6,
            support_merge_distance: 1e-6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.max_iterations > 0
            && self.weight_prune_threshold > 0.0
            && self.support_merge_distance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(OdbError::InvalidInput("solver settings must all be positive".into()))
        }
    }
}

/// Output of the solver: the design plus its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct SolvedDesign {
    pub design: DesignMeasure,
    pub criterion: Criterion,
    /// Whether the equivalence-theorem check passed on the returned design.
    pub certified: bool,
    /// Largest candidate sensitivity at the returned design.
    pub max_sensitivity: f64,
    /// The certificate bound: `q` for D, `tr M⁻¹` for A.
    pub bound: f64,
    pub iterations: usize,
    /// Criterion value after each ascent step: `ln det M` for D, `-tr M⁻¹`
    /// for A.
    pub objective_trace: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DesignJson {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
    criterion: Criterion,
    certified: bool,
    max_sensitivity: f64,
}

impl SolvedDesign {
    /// `{support, weights, criterion, certified, max_sensitivity}`.
    pub fn to_json(&self) -> Result<String> {
        let j = DesignJson {
            support: self.design.support().to_vec(),
            weights: self.design.weights().to_vec(),
            criterion: self.criterion,
            certified: self.certified,
            max_sensitivity: self.max_sensitivity,
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    /// Parses the JSON written by [`SolvedDesign::to_json`]. The bound and
    /// trace are not stored and come back as `NaN` and empty.
    pub fn from_json(text: &str) -> Result<Self> {
        let j: DesignJson = serde_json::from_str(text)?;
        Ok(SolvedDesign {
            design: DesignMeasure::new(j.support, j.weights)?,
            criterion: j.criterion,
            certified: j.certified,
            max_sensitivity: j.max_sensitivity,
            bound: f64::NAN,
            iterations: 0,
            objective_trace: Vec::new(),
        })
    }
}

/// Sensitivity of `x` at `design`: `w f(x)ᵀ M⁻¹ f(x)` for D and
/// `w f(x)ᵀ M⁻² f(x)` for A.
pub fn directional_derivative(
    x: &[f64],
    design: &DesignMeasure,
    model: &ModelSpec,
    criterion: Criterion,
) -> Result<f64> {
    let m = info_matrix_of_design(design, model)?;
    let minv = m.inverse()?;
    let mut a = model.basis.expand(x)?;
    model.weighted_features_into(x, &mut a);
    let a = DVector::from_vec(a);
    let g = &minv * &a;
    Ok(match criterion {
        Criterion::D => a.dot(&g),
        Criterion::A => g.dot(&g),
    })
}

/// Weighted candidate features `√w f` as a flat `K × q` array.
struct Features {
    q: usize,
    data: Vec<f64>,
}

impl Features {
    fn new(candidates: &CandidateSet, model: &ModelSpec) -> Self {
        let q = model.n_params();
        let mut data = vec![0.0; candidates.len() * q];
        for (i, out) in data.chunks_exact_mut(q).enumerate() {
            model.weighted_features_into(candidates.point(i), out);
        }
        Features { q, data }
    }

    fn len(&self) -> usize {
        self.data.len() / self.q
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    fn info(&self, weights: &[f64]) -> InfoMatrix {
        let mut acc = vec![0.0; self.q * self.q];
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                add_outer(&mut acc, self.row(i), w);
            }
        }
        finish_symmetric(acc, self.q, 1.0)
    }

    /// `aᵢᵀ B aᵢ` for every candidate.
    fn quadratic_forms(&self, b: &DMatrix<f64>) -> Vec<f64> {
        let q = self.q;
        let bflat: Vec<f64> = (0..q * q).map(|k| b[(k / q, k % q)]).collect();
        let eval = |a: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..q {
                let row = &bflat[i * q..(i + 1) * q];
                let t: f64 = row.iter().zip(a).map(|(x, y)| x * y).sum();
                s += a[i] * t;
            }
            s
        };
        if self.len() >= 8192 {
            self.data.par_chunks(q).map(eval).collect()
        } else {
            self.data.chunks_exact(q).map(eval).collect()
        }
    }
}

/// Sensitivities, certificate bound and objective at one design.
struct Snapshot {
    sens: Vec<f64>,
    bound: f64,
    objective: f64,
    minv: DMatrix<f64>,
}

fn snapshot(features: &Features, weights: &[f64], criterion: Criterion) -> Result<Snapshot> {
    let m = features.info(weights);
    let lu = m.lu();
    if lu.is_singular() {
        return Err(OdbError::Singular);
    }
    let minv = symmetric_inverse(m.matrix())?;
    Ok(match criterion {
        Criterion::D => Snapshot {
            sens: features.quadratic_forms(&minv),
            bound: features.q as f64,
            objective: lu.log_abs_det()?,
            minv,
        },
        Criterion::A => {
            let m2 = &minv * &minv;
            let t = minv.trace();
            Snapshot {
                sens: features.quadratic_forms(&m2),
                bound: t,
                objective: -t,
                minv,
            }
        }
    })
}

/// Optimal `γ` for `ω ← (1−γ)ω + γ e_i` in `[lo, hi]`.
fn line_step(
    criterion: Criterion,
    a: &[f64],
    snap: &Snapshot,
    q: usize,
    lo: f64,
    hi: f64,
) -> f64 {
    let av = DVector::from_column_slice(a);
    let g = &snap.minv * &av;
    let d = av.dot(&g);
    match criterion {
        Criterion::D => {
            let qf = q as f64;
            if (d - 1.0).abs() < 1e-15 {
                return if d > qf { hi } else { lo };
            }
            let gamma = (d - qf) / (qf * (d - 1.0));
            if d < 1.0 && gamma > 0.0 {
                // stationary point outside the domain; objective increases toward lo
                return lo;
            }
            gamma.clamp(lo, hi)
        }
        Criterion::A => {
            let e = g.dot(&g);
            let t = snap.bound;
            let phi = |gamma: f64| -> f64 {
                if gamma >= 1.0 {
                    return f64::INFINITY;
                }
                let c = gamma / (1.0 - gamma);
                let denom = 1.0 + c * d;
                if denom <= 0.0 {
                    return f64::INFINITY;
                }
                (t - c * e / denom) / (1.0 - gamma)
            };
            golden_section_min(phi, lo, hi)
        }
    }
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..120 {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // the endpoints win when the minimum sits on the boundary
    [(f(mid), mid), (f(a), a), (f(b), b)]
        .into_iter()
        .fold((f64::INFINITY, mid), |best, cur| if cur.0 < best.0 { cur } else { best })
        .1
}

/// Relative sensitivity gap the solver keeps polishing towards after the
/// requested certificate holds.
const POLISH_TOLERANCE: f64 = 1e-10;
const POLISH_ITERATIONS_PER_CANDIDATE: usize = 10;

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Computes a continuous `criterion`-optimal design over `candidates`.
///
/// Starts from the uniform design on all candidates. Returns a flagged,
/// non-certified design when the iteration cap is hit before the
/// certificate holds.
pub fn solve_continuous_design(
    candidates: &CandidateSet,
    model: &ModelSpec,
    criterion: Criterion,
    settings: &SolverSettings,
) -> Result<SolvedDesign> {
    settings.validate()?;
    model.validate()?;
    if candidates.dim() != model.basis.dim() {
        return Err(OdbError::DimensionMismatch {
            expected: model.basis.dim(),
            got: candidates.dim(),
        });
    }
    let k = candidates.len();
    let q = model.n_params();
    if k < q {
        return Err(OdbError::NonSpanning);
    }
    let features = Features::new(candidates, model);
    let mut weights = vec![1.0 / k as f64; k];
    let mut snap = snapshot(&features, &weights, criterion).map_err(|e| match e {
        OdbError::Singular => OdbError::NonSpanning,
        other => other,
    })?;

    let eps = settings.tolerance;
    let mut trace = vec![snap.objective];
    let mut iterations = 0;
    let mut cleanups = 0;
    // Once certified, keep stepping for a while: the certificate tolerates
    // small stray weights next to the true support, and the away steps
    // drain them.
    let mut polish_left: Option<usize> = None;
    loop {
        let imax = first_argmax(&snap.sens);
        let certified = snap.sens[imax] <= (1.0 + eps) * snap.bound;
        if certified && polish_left.is_none() {
            polish_left = Some(POLISH_ITERATIONS_PER_CANDIDATE * k.max(100));
        }
        let polished = snap.sens[imax] <= (1.0 + POLISH_TOLERANCE) * snap.bound || polish_left == Some(0);
        if (certified && polished) || iterations >= settings.max_iterations {
            let before = weights.clone();
            prune_and_merge(&mut weights, candidates, settings);
            if weights == before {
                break;
            }
            let pruned = match snapshot(&features, &weights, criterion) {
                Ok(s) => s,
                Err(_) => {
                    // pruning removed an essential point; keep the unpruned design
                    weights = before;
                    break;
                }
            };
            snap = pruned;
            cleanups += 1;
            if cleanups > 3 || iterations >= settings.max_iterations {
                break;
            }
            continue;
        }

        // away candidate: smallest sensitivity on the support
        let mut jmin = usize::MAX;
        for (j, &w) in weights.iter().enumerate() {
            if w > 0.0 && (jmin == usize::MAX || snap.sens[j] < snap.sens[jmin]) {
                jmin = j;
            }
        }
        let toward_gap = snap.sens[imax] - snap.bound;
        let away_gap = snap.bound - snap.sens[jmin];
        let (target, lo, hi) = if away_gap > toward_gap && weights[jmin] < 1.0 {
            let wj = weights[jmin];
            (jmin, -wj / (1.0 - wj), 0.0)
        } else {
            (imax, 0.0, 1.0 - 1e-12)
        };
        let gamma = line_step(criterion, features.row(target), &snap, q, lo, hi);
        if gamma == 0.0 {
            // no admissible move improves the criterion
            iterations += 1;
            if iterations >= settings.max_iterations {
                continue;
            }
            // fall back to a plain toward step
            let g = line_step(criterion, features.row(imax), &snap, q, 0.0, 1.0 - 1e-12);
            apply_step(&mut weights, imax, g);
        } else {
            apply_step(&mut weights, target, gamma);
        }
        iterations += 1;
        if let Some(left) = polish_left.as_mut() {
            *left = left.saturating_sub(1);
        }
        snap = match snapshot(&features, &weights, criterion) {
            Ok(s) => s,
            Err(e) => return Err(e),
        };
        trace.push(snap.objective);
    }

    let imax = first_argmax(&snap.sens);
    let max_sensitivity = snap.sens[imax];
    let certified = max_sensitivity <= (1.0 + eps) * snap.bound;
    let (support, w): (Vec<Vec<f64>>, Vec<f64>) = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| (candidates.point(i).to_vec(), w))
        .unzip();
    let total: f64 = w.iter().sum();
    let w = w.into_iter().map(|v| v / total).collect();
    Ok(SolvedDesign {
        design: DesignMeasure::new(support, w)?,
        criterion,
        certified,
        max_sensitivity,
        bound: snap.bound,
        iterations,
        objective_trace: trace,
    })
}

fn apply_step(weights: &mut [f64], target: usize, gamma: f64) {
    for w in weights.iter_mut() {
        *w *= 1.0 - gamma;
    }
    weights[target] += gamma;
    for w in weights.iter_mut() {
        if *w < 1e-15 {
            *w = 0.0;
        }
    }
}

/// Drops weights under the prune threshold, folds support points closer
/// than the merge distance into the earlier one, and renormalizes.
fn prune_and_merge(weights: &mut [f64], candidates: &CandidateSet, settings: &SolverSettings) {
    for w in weights.iter_mut() {
        if *w < settings.weight_prune_threshold {
            *w = 0.0;
        }
    }
    let support: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let r2 = settings.support_merge_distance * settings.support_merge_distance;
    for (a, &i) in support.iter().enumerate() {
        if weights[i] == 0.0 {
            continue;
        }
        for &j in &support[a + 1..] {
            if weights[j] == 0.0 {
                continue;
            }
            let d2: f64 = candidates
                .point(i)
                .iter()
                .zip(candidates.point(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d2 <= r2 {
                weights[i] += weights[j];
                weights[j] = 0.0;
            }
        }
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
}

/// Replaces `design` by one with the same information matrix whose
/// support vectors `(1, vech(w f fᵀ))` are linearly independent, so at most
/// `q(q+1)/2 + 1` points remain.
///
/// Each step finds a null combination of the first `q(q+1)/2 + 2` support
/// points and moves along it until a weight hits zero, choosing the
/// direction whose largest resulting weight is smaller.
pub fn reduce_support(design: &DesignMeasure, model: &ModelSpec) -> Result<DesignMeasure> {
    let q = model.n_params();
    let dim = q * (q + 1) / 2 + 1;
    let vecs: Vec<Vec<f64>> = design
        .support()
        .iter()
        .map(|x| {
            let mut a = vec![0.0; q];
            model.weighted_features_into(x, &mut a);
            let mut v = Vec::with_capacity(dim);
            v.push(1.0);
            for i in 0..q {
                for j in i..q {
                    v.push(a[i] * a[j]);
                }
            }
            v
        })
        .collect();
    let mut weights = design.weights().to_vec();
    let mut active: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    loop {
        let m = active.len().min(dim + 1);
        let sub = &active[..m];
        let a = DMatrix::from_fn(dim, m, |r, c| vecs[sub[c]][r]);
        let Some(c) = null_vector(&a) else {
            if m == active.len() {
                break;
            }
            return Err(OdbError::InvalidInput(
                "support reduction stalled on a numerically independent block".into(),
            ));
        };
        let cmax = c.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
        let tol = 1e-12 * cmax;
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for sign in [1.0, -1.0] {
            let mut step = f64::INFINITY;
            let mut hit = usize::MAX;
            for (pos, &i) in sub.iter().enumerate() {
                let ci = sign * c[pos];
                if ci > tol {
                    let t = weights[i] / ci;
                    if t < step {
                        step = t;
                        hit = pos;
                    }
                }
            }
            if hit == usize::MAX {
                continue;
            }
            let new: Vec<f64> = sub
                .iter()
                .enumerate()
                .map(|(pos, &i)| {
                    if pos == hit {
                        0.0
                    } else {
                        (weights[i] - step * sign * c[pos]).max(0.0)
                    }
                })
                .collect();
            let peak = new.iter().fold(0.0_f64, |s, &v| s.max(v));
            if best.as_ref().is_none_or(|b| peak < b.0) {
                best = Some((peak, new, hit));
            }
        }
        let Some((_, new, _)) = best else {
            break;
        };
        for (pos, &i) in sub.iter().enumerate() {
            weights[i] = new[pos];
        }
        active.retain(|&i| weights[i] > 1e-15);
    }
    let total: f64 = active.iter().map(|&i| weights[i]).sum();
    let support = active.iter().map(|&i| design.support()[i].clone()).collect();
    let w = active.iter().map(|&i| weights[i] / total).collect();
    DesignMeasure::new(support, w)
}

/// Integer allocation of `n` runs over a design's support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactAllocation {
    pub support: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl ExactAllocation {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// `⌈x⌉`, treating values within rounding noise of an integer ≥ 1 as that
/// integer.
fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if r >= 1.0 && (x - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Multiplier rounding of a continuous design to `n` runs.
///
/// When every `nω_j` is an integer the counts are exactly `nω_j`. Otherwise:
/// `n_j = ⌈(n−k)ω_j⌉`, `n*_j = nω_j − n_j`, ranks of `n*` in descending
/// order (lower index first on ties), `n_c = #{j : n*_j > 0}`; while
/// `ñ = n − Σ n_j > 0`, add one to each of the top `min(ñ, n_c)` ranked
/// counts. The ranks are computed once.
pub fn round_design(design: &DesignMeasure, n: usize) -> Result<ExactAllocation> {
    let k = design.len();
    if n < k {
        return Err(OdbError::TooFewForSupport { n, k });
    }
    let w = design.weights();
    let nf = n as f64;
    let exact: Vec<f64> = w.iter().map(|&wj| nf * wj).collect();
    let integral = exact
        .iter()
        .all(|&v| (v - v.round()).abs() <= 1e-9 * v.abs().max(1.0));
    let counts = if integral {
        let c: Vec<usize> = exact.iter().map(|v| v.round() as usize).collect();
        if c.iter().sum::<usize>() != n {
            return Err(OdbError::InvalidInput("weights do not sum to one".into()));
        }
        c
    } else {
        let m = (n - k) as f64;
        let mut counts: Vec<usize> = w.iter().map(|&wj| ceil_snapped(m * wj) as usize).collect();
        let residual: Vec<f64> = exact.iter().zip(&counts).map(|(&e, &c)| e - c as f64).collect();
        let mut ranks: Vec<usize> = (0..k).collect();
        ranks.sort_by(|&a, &b| residual[b].total_cmp(&residual[a]).then(a.cmp(&b)));
        let n_c = residual.iter().filter(|&&r| r > 0.0).count();
        let mut assigned: usize = counts.iter().sum();
        if assigned > n {
            return Err(OdbError::InvalidInput(format!(
                "rounding over-allocated ({assigned} > {n}); weights do not sum to one"
            )));
        }
        while assigned < n {
            let remaining = n - assigned;
            if n_c == 0 {
                return Err(OdbError::InvalidInput("no positive residuals to allocate".into()));
            }
            for &r in ranks.iter().take(remaining.min(n_c)) {
                counts[r] += 1;
            }
            assigned = counts.iter().sum();
        }
        counts
    };
    Ok(ExactAllocation {
        support: design.support().to_vec(),
        counts,
    })
}

/// The optimal design's information matrix with its inverse cached, used
/// as the reference for every efficiency of a study.
#[derive(Debug, Clone)]
pub struct IdealInfo {
    matrix: InfoMatrix,
    inverse: DMatrix<f64>,
    log_det: f64,
}

impl IdealInfo {
    pub fn matrix(&self) -> &InfoMatrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Efficiency of `m` against this reference (clipping tolerance `tol`).
    pub fn efficiency(&self, m: &InfoMatrix, criterion: Criterion, tol: f64) -> Result<f64> {
        if m.dim() != self.matrix.dim() {
            return Err(OdbError::DimensionMismatch {
                expected: self.matrix.dim(),
                got: m.dim(),
            });
        }
        let lu = Lu::factor(m.matrix());
        if lu.is_singular() {
            return Ok(0.0);
        }
        let value = match criterion {
            Criterion::D => ((lu.log_abs_det()? - self.log_det) / m.dim() as f64).exp(),
            Criterion::A => self.inverse.trace() / symmetric_inverse(m.matrix())?.trace(),
        };
        if value > 1.0 + tol {
            return Err(OdbError::EfficiencyAboveOne { value });
        }
        Ok(value.min(1.0))
    }
}

/// `M(ξ*)`, the per-unit information of the ideal design.
pub fn ideal_info_matrix(design: &DesignMeasure, model: &ModelSpec) -> Result<IdealInfo> {
    let matrix = info_matrix_of_design(design, model)?;
    let lu = matrix.lu();
    let log_det = lu.log_abs_det()?;
    let inverse = symmetric_inverse(matrix.matrix())?;
    Ok(IdealInfo {
        matrix,
        inverse,
        log_det,
    })
}

/// Efficiency of a design against another, mainly for tests and reports.
pub fn design_efficiency(
    design: &DesignMeasure,
    reference: &DesignMeasure,
    model: &ModelSpec,
    criterion: Criterion,
    tol: f64,
) -> Result<f64> {
    efficiency(
        &info_matrix_of_design(design, model)?,
        &info_matrix_of_design(reference, model)?,
        criterion,
        tol,
    )
}

/// Support points with their weights, keyed for stable lookups in tests.
pub fn support_map(design: &DesignMeasure) -> BTreeMap<Vec<i64>, f64> {
    design
        .support()
        .iter()
        .zip(design.weights())
        .map(|(x, &w)| (x.iter().map(|v| (v * 1e6).round() as i64).collect(), w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::criterion_value;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn poly(degree: u32) -> ModelSpec {
        let monos = (0..=degree).map(|d| vec![d]).collect();
        ModelSpec::linear(FeatureBasis::custom(1, monos).unwrap())
    }

    fn solve(model: &ModelSpec, c: Criterion, grid: usize) -> SolvedDesign {
        let cands = CandidateSet::grid(model.basis.dim(), grid).unwrap();
        solve_continuous_design(&cands, model, c, &SolverSettings::default()).unwrap()
    }

    #[test]
    fn grid_layout() {
        let g = CandidateSet::grid(2, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(0), &[-1.0, -1.0]);
        assert_eq!(g.point(1), &[-1.0, 0.0]);
        assert_eq!(g.point(8), &[1.0, 1.0]);
        assert!(CandidateSet::grid(2, 1).is_err());
    }

    #[test]
    fn dataset_rows_deduplicated() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![0.0], vec![2.0]], None).unwrap();
        let t = BoxTransform::fit(&ds).unwrap();
        let c = CandidateSet::dataset_rows(&ds, &t).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.point(2), &[1.0]);
    }

    #[test]
    fn sensitivity_examples() {
        let model = poly(1);
        let d = DesignMeasure::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(
            directional_derivative(&[1.0], &d, &model, Criterion::D).unwrap(),
            2.0
        );
        assert_relative_eq!(
            directional_derivative(&[-1.0], &d, &model, Criterion::D).unwrap(),
            2.0
        );
        assert_relative_eq!(
            directional_derivative(&[1.0], &d, &model, Criterion::A).unwrap(),
            2.0
        );
        let single = DesignMeasure::new(vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(directional_derivative(&[0.0], &single, &model, Criterion::D).is_err());
    }

    #[test]
    fn line_d_optimum() {
        let s = solve(&poly(1), Criterion::D, 21);
        assert!(s.certified);
        let map = support_map(&s.design);
        assert_eq!(map.len(), 2);
        assert_relative_eq!(map[&vec![-1_000_000]], 0.5, epsilon = 1e-3);
        assert_relative_eq!(map[&vec![1_000_000]], 0.5, epsilon = 1e-3);
        assert!(s.max_sensitivity <= 2.0 * (1.0 + 1e-4));
    }

    #[test]
    fn line_a_optimum() {
        let s = solve(&poly(1), Criterion::A, 21);
        assert!(s.certified);
        let map = support_map(&s.design);
        assert_eq!(map.len(), 2);
        assert_relative_eq!(map[&vec![1_000_000]], 0.5, epsilon = 1e-3);
        // brute force over two-point weightings on {-1, 1}
        let best = (1..1000)
            .map(|i| i as f64 / 1000.0)
            .min_by(|&a, &b| {
                let tr = |w: f64| 1.0 / (4.0 * w * (1.0 - w)) * 2.0; // tr M⁻¹ for weights (w, 1-w)
                tr(a).total_cmp(&tr(b))
            })
            .unwrap();
        assert_relative_eq!(best, 0.5, epsilon = 1e-3);
    }

    #[test]
    fn quadratic_d_optimum() {
        let s = solve(&poly(2), Criterion::D, 41);
        assert!(s.certified);
        let map = support_map(&s.design);
        assert_eq!(map.len(), 3);
        for x in [-1_000_000, 0, 1_000_000] {
            assert_relative_eq!(map[&vec![x]], 1.0 / 3.0, epsilon = 1e-3);
        }
        // classic oracle: symmetric designs (w, 1-2w, w) on {-1, 0, 1};
        // det M = 2w·(w - 2w²)... searched numerically on a fine grid
        let det = |w: f64| {
            let d = DesignMeasure::new(
                vec![vec![-1.0], vec![0.0], vec![1.0]],
                vec![w, 1.0 - 2.0 * w, w],
            )
            .unwrap();
            criterion_value(&info_matrix_of_design(&d, &poly(2)).unwrap(), Criterion::D).unwrap()
        };
        let best = (1..5000)
            .map(|i| i as f64 / 10_000.0)
            .max_by(|&a, &b| det(a).total_cmp(&det(b)))
            .unwrap();
        assert_relative_eq!(best, 1.0 / 3.0, epsilon = 1e-3);
    }

    #[test]
    fn ascent_is_monotone() {
        let model = ModelSpec::linear(FeatureBasis::quadratic(2).unwrap());
        for c in [Criterion::D, Criterion::A] {
            let s = solve(&model, c, 5);
            assert!(s.certified, "{c} not certified");
            for w in s.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{c}: {} then {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn deterministic() {
        let model = ModelSpec::linear(FeatureBasis::quadratic(2).unwrap());
        let a = solve(&model, Criterion::A, 7);
        let b = solve(&model, Criterion::A, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn non_spanning_candidates() {
        let model = poly(2);
        let c = CandidateSet::explicit(vec![vec![-1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            solve_continuous_design(&c, &model, Criterion::D, &SolverSettings::default()),
            Err(OdbError::NonSpanning)
        ));
        let c = CandidateSet::explicit(vec![vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            solve_continuous_design(&c, &model, Criterion::D, &SolverSettings::default()),
            Err(OdbError::NonSpanning)
        ));
    }

    #[test]
    fn iteration_cap_is_flagged() {
        let model = ModelSpec::linear(FeatureBasis::quadratic(2).unwrap());
        let cands = CandidateSet::grid(2, 11).unwrap();
        let settings = SolverSettings {
            max_iterations: 2,
            ..Default::default()
        };
        let s = solve_continuous_design(&cands, &model, Criterion::D, &settings).unwrap();
        assert!(!s.certified);
    }

    #[test]
    fn ideal_info_delegates() {
        let s = solve(&poly(1), Criterion::D, 11);
        let ideal = ideal_info_matrix(&s.design, &poly(1)).unwrap();
        assert_eq!(
            ideal.matrix(),
            &info_matrix_of_design(&s.design, &poly(1)).unwrap()
        );
        assert_relative_eq!(ideal.matrix().matrix(), &DMatrix::identity(2, 2), epsilon = 1e-6);
    }

    #[test]
    fn ideal_info_quadratic_square_matches_direct_sum() {
        let basis = FeatureBasis::quadratic(2).unwrap();
        let model = ModelSpec::linear(basis.clone());
        let s = solve(&model, Criterion::D, 3);
        let ideal = ideal_info_matrix(&s.design, &model).unwrap();
        let mut direct = DMatrix::zeros(6, 6);
        for (x, &w) in s.design.support().iter().zip(s.design.weights()) {
            let f = DVector::from_vec(basis.expand(x).unwrap());
            direct += &f * f.transpose() * w;
        }
        assert_relative_eq!(ideal.matrix().matrix(), &direct, epsilon = 1e-14);
        // the known optimum: corners ≈ 0.1458, edge midpoints ≈ 0.0802, centre ≈ 0.0962
        let map = support_map(&s.design);
        assert_relative_eq!(map[&vec![1_000_000, 1_000_000]], 0.1458, epsilon = 1e-3);
        assert_relative_eq!(map[&vec![0, 1_000_000]], 0.0802, epsilon = 1e-3);
        assert_relative_eq!(map[&vec![0, 0]], 0.0962, epsilon = 1e-3);
    }

    #[test]
    fn json_roundtrip() {
        let s = solve(&poly(1), Criterion::D, 5);
        let text = s.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["support", "weights", "criterion", "certified", "max_sensitivity"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back = SolvedDesign::from_json(&text).unwrap();
        assert_eq!(back.design, s.design);
    }

    #[test]
    fn rounding_hand_traces() {
        let d = DesignMeasure::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        assert_eq!(round_design(&d, 10).unwrap().counts, vec![5, 5]);
        let d = DesignMeasure::new(vec![vec![-1.0], vec![0.0], vec![1.0]], vec![0.5, 0.3, 0.2])
            .unwrap();
        assert_eq!(round_design(&d, 10).unwrap().counts, vec![5, 3, 2]);
        let d = DesignMeasure::new(vec![vec![0.0]], vec![1.0]).unwrap();
        assert_eq!(round_design(&d, 7).unwrap().counts, vec![7]);
        let d = DesignMeasure::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        assert!(matches!(round_design(&d, 1), Err(OdbError::TooFewForSupport { .. })));
    }

    #[test]
    fn rounding_non_integral_path() {
        // ω = (0.45, 0.35, 0.2), n = 9: ⌈6ω⌉ = (3, 3, 2), n* = (1.05, 0.15, -0.2),
        // ñ = 1 → counts (4, 3, 2)
        let d = DesignMeasure::new(vec![vec![-1.0], vec![0.0], vec![1.0]], vec![0.45, 0.35, 0.2])
            .unwrap();
        assert_eq!(round_design(&d, 9).unwrap().counts, vec![4, 3, 2]);
    }

    #[test]
    fn rounding_deviation_can_exceed_one() {
        // ω = (11/12, 1/24, 1/24), n = 30: ⌈27ω⌉ = (25, 2, 2), n* = (2.5, -0.75, -0.75),
        // ñ = 1 → (26, 2, 2) while nω = (27.5, 1.25, 1.25).
        let d = DesignMeasure::new(
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            vec![11.0 / 12.0, 1.0 / 24.0, 1.0 / 24.0],
        )
        .unwrap();
        let a = round_design(&d, 30).unwrap();
        assert_eq!(a.counts, vec![26, 2, 2]);
        assert_relative_eq!(27.5 - a.counts[0] as f64, 1.5);
    }

    #[test]
    fn support_reduction_keeps_information() {
        let basis = FeatureBasis::linear(4).unwrap();
        let model = ModelSpec::linear(basis);
        let s = solve(&model, Criterion::D, 2);
        assert_eq!(s.design.len(), 16);
        let r = reduce_support(&s.design, &model).unwrap();
        assert!(r.len() <= 5 * 6 / 2 + 1);
        assert!(r.len() < 16);
        let m0 = info_matrix_of_design(&s.design, &model).unwrap();
        let m1 = info_matrix_of_design(&r, &model).unwrap();
        assert_relative_eq!(m0.matrix(), m1.matrix(), epsilon = 1e-10);
    }

    fn random_weights(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn rounding_allocates_exactly_n(
            (w, extra) in (1usize..10).prop_flat_map(|k| (random_weights(k), 0usize..200))
        ) {
            let k = w.len();
            let n = 2 * k + extra;
            let support = (0..k).map(|i| vec![-1.0 + 2.0 * i as f64 / k.max(2) as f64]).collect();
            let total: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|v| v / total).collect();
            let Ok(d) = DesignMeasure::new(support, w.clone()) else { return Ok(()); };
            let a = round_design(&d, n).unwrap();
            prop_assert_eq!(a.total(), n);
            for (j, &c) in a.counts.iter().enumerate() {
                prop_assert!(c >= 1);
                prop_assert!(c as f64 >= (n - k) as f64 * w[j] - 1e-9);
            }
        }
    }

    #[test]
    fn optimum_dominates_random_designs() {
        let model = ModelSpec::linear(FeatureBasis::quadratic(2).unwrap());
        let cands = CandidateSet::grid(2, 5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for c in [Criterion::D, Criterion::A] {
            let s = solve_continuous_design(&cands, &model, c, &SolverSettings::default()).unwrap();
            let best = criterion_value(&info_matrix_of_design(&s.design, &model).unwrap(), c).unwrap();
            let pts: Vec<Vec<f64>> = (0..cands.len()).map(|i| cands.point(i).to_vec()).collect();
            let uniform = DesignMeasure::uniform(pts.clone()).unwrap();
            let u = criterion_value(&info_matrix_of_design(&uniform, &model).unwrap(), c).unwrap();
            assert!(best >= u);
            for _ in 0..100 {
                let w: Vec<f64> = (0..pts.len()).map(|_| rng.random::<f64>()).collect();
                let t: f64 = w.iter().sum();
                let d = DesignMeasure::new(pts.clone(), w.iter().map(|v| v / t).collect()).unwrap();
                let v = criterion_value(&info_matrix_of_design(&d, &model).unwrap(), c).unwrap();
                assert!(best >= v, "{c}: {best} < {v}");
            }
        }
    }
}
