use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::data::CovariatePatternTable;
use crate::model::ModelSpec;
use crate::posterior::PosteriorDraws;
use crate::simgen::{generate_dataset, truth_params, GenCoefficients};

/// Posterior draws that repeat a single parameter vector, so estimator output
/// isolates the Monte Carlo marginalization step.
fn const_draws(theta: &ParamVector, n: usize) -> PosteriorDraws {
    PosteriorDraws {
        spec: theta.spec,
        draws: vec![theta.to_flat(); n],
        chain_id: vec![0; n],
        warmup_discarded: 0,
        rhat: None,
        accept_rate: vec![1.0],
        divergence_warning: false,
        seed: 0,
        chains: 1,
    }
}

#[test]
fn quantile_matches_hand_computed_values() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_relative_eq!(quantile(&v, 0.5), 3.0);
    assert_relative_eq!(quantile(&v, 0.25), 2.0);
    assert_relative_eq!(quantile(&v, 0.0), 1.0);
    assert_relative_eq!(quantile(&v, 1.0), 5.0);
    // interpolation between order statistics: h = 3 * 0.9 = 2.7
    let w = [10.0, 20.0, 30.0, 40.0];
    assert_relative_eq!(quantile(&w, 0.9), 30.0 + 0.7 * 10.0);
    // unsorted input is handled
    let s = [4.0, 1.0, 3.0, 2.0, 5.0];
    assert_relative_eq!(quantile(&s, 0.5), 3.0);
}

#[test]
fn dirichlet_weights_are_a_probability_vector() {
    let mut rng = crate::rng::substream_rng(1, &[2]);
    let w = dirichlet_sample(&[3.0, 1.0, 0.5, 10.0], &mut rng).unwrap();
    let total: f64 = w.weights().iter().sum();
    assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    assert!(w.weights().iter().all(|&x| x >= 0.0));
    assert!(dirichlet_sample(&[1.0, 0.0], &mut rng).is_err());
    assert!(dirichlet_sample(&[], &mut rng).is_err());
}

#[test]
fn dirichlet_mean_matches_normalized_concentrations() {
    let alpha = [2.0, 5.0, 13.0];
    let total: f64 = alpha.iter().sum();
    let mut rng = crate::rng::substream_rng(9, &[4]);
    let mut acc = [0.0; 3];
    let reps = 20_000;
    for _ in 0..reps {
        let w = dirichlet_sample(&alpha, &mut rng).unwrap();
        for (a, &x) in acc.iter_mut().zip(w.weights()) {
            *a += x;
        }
    }
    for (j, a) in acc.iter().enumerate() {
        assert!(
            (a / reps as f64 - alpha[j] / total).abs() < 0.005,
            "coord {j}: {}",
            a / reps as f64
        );
    }
}

#[test]
fn rnde_closed_form_matches_monte_carlo() {
    let theta = truth_params(&GenCoefficients::transportable(), true, true);
    let z = [1.0, 0.0];
    let exact = rnde_closed_form(&theta, &z);
    // simulate the randomized-mediator scheme at this fixed z
    let mut rng = crate::rng::substream_rng(55, &[1]);
    let reps = 400_000;
    let mut total = 0.0;
    for _ in 0..reps {
        let draw = |rng: &mut rand::rngs::SmallRng, p: f64| f64::from(rng.gen::<f64>() < p);
        let mut arm = |a: f64| {
            let u0 = draw(&mut rng, theta.prob_u(0.0, &z));
            let ua = draw(&mut rng, theta.prob_u(a, &z));
            let m = draw(&mut rng, theta.prob_m(0.0, &z, u0));
            theta.mean_y(a, &z, m, ua)
        };
        total += arm(1.0) - arm(0.0);
    }
    let mc = total / reps as f64;
    assert!((exact - mc).abs() < 0.003, "exact {exact} vs mc {mc}");
}

#[test]
fn sim_and_closed_form_agree_at_a_fixed_parameter() {
    let theta = truth_params(&GenCoefficients::transportable(), true, true);
    let main = generate_dataset(2000, &GenCoefficients::transportable(), true, true, false, 13);
    let draws = const_draws(&theta, 50);
    let sim = bdf_sim_estimate(&draws, &main, rnde_regimes(), 17).unwrap();
    // standardize the exact per-pattern value over the empirical z law
    let table = CovariatePatternTable::from_dataset(&main);
    let exact: f64 = table
        .proportions()
        .iter()
        .enumerate()
        .map(|(k, &p)| p * rnde_closed_form(&theta, table.pattern(k)))
        .sum();
    assert!((sim.point - exact).abs() < 0.01, "sim {} vs exact {exact}", sim.point);
    assert_eq!(sim.kind, EstimandKind::Rnde);
    assert_eq!(sim.method, EstimandMethod::Sim);
}

#[test]
fn cf_point_centers_on_the_exact_standardized_value() {
    let theta = truth_params(&GenCoefficients::transportable(), true, false);
    let main = generate_dataset(3000, &GenCoefficients::transportable(), true, false, false, 29);
    let table = CovariatePatternTable::from_dataset(&main);
    let draws = const_draws(&theta, 400);
    let cf = bdf_cf_estimate(&draws, &table, 23).unwrap();
    let exact: f64 = table
        .proportions()
        .iter()
        .enumerate()
        .map(|(k, &p)| p * rnde_closed_form(&theta, table.pattern(k)))
        .sum();
    // Dirichlet noise is O(n^{-1/2}) per draw and averages out over draws
    assert!((cf.point - exact).abs() < 0.002, "cf {} vs exact {exact}", cf.point);
    assert!(cf.ci_low <= cf.point && cf.point <= cf.ci_high);
    assert_eq!(cf.method, EstimandMethod::Cf);
}

#[test]
fn cf_estimate_is_deterministic_in_the_seed() {
    let theta = truth_params(&GenCoefficients::transportable(), false, false);
    let main = generate_dataset(500, &GenCoefficients::transportable(), false, false, false, 3);
    let table = CovariatePatternTable::from_dataset(&main);
    let draws = const_draws(&theta, 30);
    let a = bdf_cf_estimate(&draws, &table, 7).unwrap();
    let b = bdf_cf_estimate(&draws, &table, 7).unwrap();
    let c = bdf_cf_estimate(&draws, &table, 8).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_ne!(a.draws, c.draws);
}

#[test]
fn nde_plus_nie_decomposes_the_total_effect_per_draw() {
    // shared substreams draw (u, m_a, m_a*) identically in all three schemes
    let theta = truth_params(&GenCoefficients::transportable(), false, true);
    let main = generate_dataset(500, &GenCoefficients::transportable(), false, true, false, 41);
    let draws = const_draws(&theta, 40);
    let seed = 101;
    let nde = estimate_nde(&draws, &main, 1, 0, seed).unwrap();
    let nie = estimate_nie(&draws, &main, 1, 0, seed).unwrap();
    let te = estimate_total_effect(&draws, &main, 1, 0, seed).unwrap();
    for b in 0..draws.n_draws() {
        assert_relative_eq!(
            nde.draws[b] + nie.draws[b],
            te.draws[b],
            max_relative = 1e-12,
            epsilon = 1e-12
        );
    }
}

#[test]
fn natural_effects_require_baseline_confounder() {
    let theta = truth_params(&GenCoefficients::transportable(), true, true);
    let main = generate_dataset(50, &GenCoefficients::transportable(), true, true, false, 2);
    let draws = const_draws(&theta, 5);
    for res in [
        estimate_nde(&draws, &main, 1, 0, 1),
        estimate_nie(&draws, &main, 1, 0, 1),
        estimate_total_effect(&draws, &main, 1, 0, 1),
    ] {
        assert!(matches!(res, Err(BdfError::NotIdentified { .. })));
    }
    // the randomized analogs remain available
    assert!(bdf_sim_estimate(&draws, &main, rnde_regimes(), 1).is_ok());
    assert!(estimate_rnie(&draws, &main, 1, 0, 1).is_ok());
}

#[test]
fn mismatched_regime_kinds_are_rejected() {
    let theta = truth_params(&GenCoefficients::transportable(), true, true);
    let main = generate_dataset(50, &GenCoefficients::transportable(), true, true, false, 2);
    let draws = const_draws(&theta, 5);
    let res = bdf_sim_estimate(
        &draws,
        &main,
        (
            Regime::RandomizedMediator { a: 1, mediator_law_a: 0 },
            Regime::SetExposureAndMediator { a: 0, m: 0 },
        ),
        1,
    );
    assert!(matches!(res, Err(BdfError::UnsupportedRegime(_))));
}

#[test]
fn deterministic_closed_form_is_antisymmetric() {
    let theta = truth_params(&GenCoefficients::transportable(), true, true);
    let g = Regime::SetExposureAndMediator { a: 1, m: 1 };
    let gp = Regime::SetExposureAndMediator { a: 0, m: 1 };
    let z = [0.0, 1.0];
    let fwd = deterministic_closed_form(&theta, &z, g, gp).unwrap();
    let rev = deterministic_closed_form(&theta, &z, gp, g).unwrap();
    assert_relative_eq!(fwd, -rev, max_relative = 1e-14);
    assert!(fwd > 0.0, "setting a = 1 raises the outcome: {fwd}");
}

#[test]
fn cde_matches_exact_value_under_exposure_induced_confounding() {
    let theta = truth_params(&GenCoefficients::transportable(), true, true);
    let main = generate_dataset(2000, &GenCoefficients::transportable(), true, true, false, 19);
    let draws = const_draws(&theta, 50);
    let cde = estimate_cde(&draws, &main, 1, 0, 1, 61).unwrap();
    let table = CovariatePatternTable::from_dataset(&main);
    let exact: f64 = table
        .proportions()
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            p * deterministic_closed_form(
                &theta,
                table.pattern(k),
                Regime::SetExposureAndMediator { a: 1, m: 1 },
                Regime::SetExposureAndMediator { a: 0, m: 1 },
            )
            .unwrap()
        })
        .sum();
    assert!((cde.point - exact).abs() < 0.01, "cde {} vs exact {exact}", cde.point);
    assert_eq!(cde.kind, EstimandKind::Cde);
}

#[test]
fn ace_tvc_sim_and_cf_agree() {
    let theta = truth_params(&GenCoefficients::transportable(), true, true);
    let main = generate_dataset(2000, &GenCoefficients::transportable(), true, true, false, 23);
    let table = CovariatePatternTable::from_dataset(&main);
    let draws = const_draws(&theta, 80);
    let sim = estimate_ace_tvc(&draws, &main, (1, 1), (0, 0), 71).unwrap();
    let cf = estimate_ace_tvc_cf(&draws, &table, (1, 1), (0, 0), 73).unwrap();
    assert!((sim.point - cf.point).abs() < 0.01, "sim {} vs cf {}", sim.point, cf.point);
    assert_eq!(sim.kind, EstimandKind::AceTvc);
    assert_eq!(cf.kind, EstimandKind::AceTvc);

    // identical regimes contrast to zero in expectation
    let null = estimate_ace_tvc(&draws, &main, (1, 0), (1, 0), 77).unwrap();
    assert!(null.point.abs() < 0.01, "null contrast {}", null.point);
}

#[test]
fn json_serialization_can_omit_draws() {
    let theta = truth_params(&GenCoefficients::transportable(), false, false);
    let main = generate_dataset(100, &GenCoefficients::transportable(), false, false, false, 5);
    let draws = const_draws(&theta, 10);
    let res = estimate_cde(&draws, &main, 1, 0, 0, 3).unwrap();
    let full: serde_json::Value = serde_json::from_str(&res.to_json(true).unwrap()).unwrap();
    let slim: serde_json::Value = serde_json::from_str(&res.to_json(false).unwrap()).unwrap();
    assert_eq!(full["draws"].as_array().unwrap().len(), 10);
    assert!(slim["draws"].as_array().unwrap().is_empty());
    assert_eq!(full["point"], slim["point"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_stays_in_range_and_is_monotone(
        mut values in proptest::collection::vec(-100.0f64..100.0, 1..40),
        p1 in 0.0f64..1.0,
        p2 in 0.0f64..1.0,
    ) {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let q1 = quantile(&values, p1);
        prop_assert!(q1 >= lo - 1e-12 && q1 <= hi + 1e-12);
        let (pa, pb) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        prop_assert!(quantile(&values, pa) <= quantile(&values, pb) + 1e-12);
        // invariant to input order
        values.reverse();
        prop_assert_eq!(quantile(&values, p1), q1);
    }

    #[test]
    fn dirichlet_always_normalizes(
        alpha in proptest::collection::vec(0.1f64..20.0, 1..12),
        seed in 0u64..1000,
    ) {
        let mut rng = crate::rng::substream_rng(seed, &[3]);
        let w = dirichlet_sample(&alpha, &mut rng).unwrap();
        let total: f64 = w.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(w.weights().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn rnde_closed_form_is_bounded_by_one(
        g0 in -2.0f64..2.0,
        b0 in -2.0f64..2.0,
        a0 in -2.0f64..2.0,
        bu in -2.0f64..2.0,
        au in -2.0f64..2.0,
        z1 in 0u8..2,
    ) {
        let spec = ModelSpec::new(1, true, true);
        let theta = ParamVector::new(
            spec,
            vec![g0, 0.3, -0.2],
            vec![b0, 0.5, 0.1, bu],
            vec![a0, 0.7, -0.1, 0.4, 0.2, au],
        ).unwrap();
        let v = rnde_closed_form(&theta, &[f64::from(z1)]);
        prop_assert!(v.is_finite());
        prop_assert!((-1.0..=1.0).contains(&v));
    }
}
