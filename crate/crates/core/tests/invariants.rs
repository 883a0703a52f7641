//! Properties that hold for every input, checked on random instances.

use odb_core::design::{directional_derivative, reduce_support};
use odb_core::estimators::ols_fit;
use odb_core::samplers::{
    exchange_select, iboss_select, odb_select_with_design, pps_select, pps_weights, srs_select, Distance,
    ExchangeSettings,
};
use odb_core::sim::summarize;
use odb_core::{
    info_matrix_of_dataset, info_matrix_of_design, info_matrix_of_rows, solve_continuous_design, BoxTransform,
    CandidateSet, Criterion, Dataset, DesignMeasure, FeatureBasis, ModelSpec, SampleSelection, SolverSettings,
};
use proptest::prelude::*;

fn dataset(dim: usize, max_rows: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 12..max_rows)
        .prop_map(|rows| Dataset::from_rows(&rows, None).unwrap())
}

fn well_formed(sel: &SampleSelection, n: usize, big_n: usize) -> bool {
    sel.rows.len() == n && sel.rows.windows(2).all(|w| w[0] < w[1]) && sel.rows.iter().all(|&r| r < big_n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selections_are_sorted_distinct_and_sized(data in dataset(2, 80), n in 6usize..12, seed in any::<u64>()) {
        let model = ModelSpec::linear(FeatureBasis::linear(2).unwrap());
        let t = BoxTransform::fit(&data).unwrap();
        let big_n = data.n_rows();
        let cands = CandidateSet::default_for(&model.basis, Some((&data, &t))).unwrap();
        let solved = solve_continuous_design(&cands, &model, Criterion::D, &SolverSettings::default()).unwrap();
        let all = [
            odb_select_with_design(&data, &model, &t, &solved, n, Distance::Euclidean).unwrap(),
            odb_select_with_design(&data, &model, &t, &solved, n, Distance::Mahalanobis).unwrap(),
            iboss_select(&data, n).unwrap(),
            srs_select(big_n, n, seed).unwrap(),
            pps_select(&pps_weights(&data, &model, &t).unwrap(), n, seed).unwrap(),
            exchange_select(&data, &model, &t, Criterion::D, n, seed, &ExchangeSettings::default()).unwrap(),
        ];
        for sel in &all {
            prop_assert!(well_formed(sel, n, big_n), "{:?}: {:?}", sel.sampler, sel.rows);
        }
    }

    #[test]
    fn efficiencies_lie_in_unit_interval(data in dataset(2, 60), pick in prop::collection::vec(any::<prop::sample::Index>(), 1..30)) {
        let model = ModelSpec::linear(FeatureBasis::quadratic(2).unwrap());
        let t = BoxTransform::fit(&data).unwrap();
        let cands = CandidateSet::grid(2, 3).unwrap();
        let rows: Vec<usize> = pick.iter().map(|i| i.index(data.n_rows())).collect();
        for c in [Criterion::D, Criterion::A] {
            let solved = solve_continuous_design(&cands, &model, c, &SolverSettings::default()).unwrap();
            let ideal = odb_core::design::ideal_info_matrix(&solved.design, &model).unwrap();
            for m in [info_matrix_of_rows(&data, &rows, &model, &t).unwrap(), info_matrix_of_dataset(&data, &model, &t).unwrap()] {
                let e = ideal.efficiency(&m, c, 1e-4).unwrap();
                prop_assert!((0.0..=1.0).contains(&e), "{c}: {e}");
            }
        }
    }

    #[test]
    fn certified_designs_satisfy_the_equivalence_bound(
        points in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 8..40),
        a_criterion in any::<bool>(),
    ) {
        let model = ModelSpec::linear(FeatureBasis::linear(2).unwrap());
        let cands = CandidateSet::explicit(points).unwrap();
        let c = if a_criterion { Criterion::A } else { Criterion::D };
        let settings = SolverSettings::default();
        let solved = match solve_continuous_design(&cands, &model, c, &settings) {
            Ok(s) => s,
            Err(_) => return Ok(()), // collinear draw
        };
        prop_assert!(solved.certified);
        for i in 0..cands.len() {
            let d = directional_derivative(cands.point(i), &solved.design, &model, c).unwrap();
            prop_assert!(d <= (1.0 + settings.tolerance) * solved.bound, "{d} > {}", solved.bound);
        }
        prop_assert!(solved.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0)));
    }

    #[test]
    fn support_reduction_keeps_information(
        points in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 1), 6..25),
        raw in prop::collection::vec(0.05f64..1.0, 25),
    ) {
        let model = ModelSpec::linear(FeatureBasis::quadratic(1).unwrap());
        let w: Vec<f64> = raw[..points.len()].to_vec();
        let total: f64 = w.iter().sum();
        let design = DesignMeasure::new(points, w.iter().map(|v| v / total).collect()).unwrap();
        let reduced = reduce_support(&design, &model).unwrap();
        prop_assert!(reduced.len() <= 3 * 4 / 2 + 1);
        prop_assert!((reduced.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let a = info_matrix_of_design(&design, &model).unwrap();
        let b = info_matrix_of_design(&reduced, &model).unwrap();
        prop_assert!((a.matrix() - b.matrix()).amax() < 1e-8);
    }

    #[test]
    fn pps_probabilities_form_a_distribution(data in dataset(3, 50)) {
        let model = ModelSpec::linear(FeatureBasis::linear(3).unwrap());
        let t = BoxTransform::fit(&data).unwrap();
        let p = pps_weights(&data, &model, &t).unwrap();
        prop_assert!(p.probabilities().iter().all(|&v| v > 0.0));
        prop_assert!((p.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_covariance_is_positive_semidefinite(est in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..40)) {
        let s = summarize(&est).unwrap();
        prop_assert!(s.determinant >= 0.0);
        prop_assert!(s.trace >= 0.0);
        for i in 0..3 {
            prop_assert!(s.covariance[i][i] >= 0.0);
        }
    }
}

#[test]
fn pipeline_recovers_a_noise_free_plane() {
    // y = 1 + 2x₁ − 3x₂ exactly: every sampler's OLS fit is the truth.
    let rows: Vec<Vec<f64>> = (0..400).map(|i| vec![((i * 37) % 101) as f64 / 10.0, ((i * 53) % 97) as f64 / 7.0]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 1.0 + 2.0 * r[0] - 3.0 * r[1]).collect();
    let data = Dataset::from_rows(&rows, Some(y)).unwrap();
    let model = ModelSpec::linear(FeatureBasis::linear(2).unwrap());
    let t = BoxTransform::fit(&data).unwrap();
    let cands = CandidateSet::default_for(&model.basis, Some((&data, &t))).unwrap();
    let solved = solve_continuous_design(&cands, &model, Criterion::D, &SolverSettings::default()).unwrap();
    let sel = odb_select_with_design(&data, &model, &t, &solved, 20, Distance::Euclidean).unwrap();
    let fit = ols_fit(&data, &sel.rows, &model).unwrap();
    for (got, want) in fit.theta_hat.iter().zip([1.0, 2.0, -3.0]) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
