mod common;

use std::collections::BTreeSet;

use common::{scenarios, sup_relative_error};
use proptest::prelude::*;
use wardrop::equilibrium::AssignOptions;
use wardrop::fixtures;
use wardrop::inverse::{
    build_inverse_qp, cross_validate, estimate_cost, estimate_cost_with, reproduction_error, DualForm, Hyper, InverseVIProblem, Scenario,
};
use wardrop::qp::QpOptions;
use wardrop::CongestionFactor;

fn problem(scenarios: Vec<Scenario>, scale: f64, degree: usize, gamma: f64) -> InverseVIProblem {
    InverseVIProblem {
        scenarios,
        hyper: Hyper { scale, degree, gamma },
        dual_form: DualForm::PerOrigin,
    }
}

#[test]
fn single_link_recovers_free_flow() {
    let f = fixtures::line(1, 40.0);
    let s = Scenario::new(f.network.clone(), f.demand.clone(), vec![40.0]).unwrap();
    let est = estimate_cost(&problem(vec![s], 1.0, 1, 1.0)).unwrap();
    // interior-point accuracy is about the square root of the tolerance
    assert!(est.cf.beta()[1].abs() < 1e-6, "{:?}", est.cf.beta());
    assert!(est.epsilon[0].abs() < 1e-4);
    let y = &est.prices[0][0];
    assert!((y[1] - y[0] - 1.0).abs() < 1e-4, "{y:?}");
}

#[test]
fn row_counts_on_sioux_falls() {
    let sf = fixtures::sioux_falls();
    let sc = scenarios(&sf, &sf.cf, &[1.0], 1e-6);
    let levels: BTreeSet<u64> = sc[0]
        .network
        .links()
        .iter()
        .zip(&sc[0].flow)
        .map(|(l, x)| (x / l.capacity).to_bits())
        .collect();
    let origins: BTreeSet<usize> = sf.network.od_pairs().iter().map(|od| od.origin).collect();
    let mut p = problem(sc, 1.0, 4, 1.0);
    let per_origin = build_inverse_qp(&p).unwrap();
    assert_eq!(per_origin.dual_rows, origins.len() * 76);
    assert_eq!(per_origin.monotone_rows, levels.len() - 1);
    p.dual_form = DualForm::PerOd;
    let per_od = build_inverse_qp(&p).unwrap();
    assert_eq!(per_od.dual_rows, 528 * 76);
    assert_eq!(per_od.gap_rows, 1);
}

#[test]
fn dual_forms_agree() {
    let f = fixtures::interstate();
    let sc = scenarios(&f, &f.cf, &[0.9, 1.1], 1e-10);
    let mut p = problem(sc, 1.0, 4, 10.0);
    let a = estimate_cost(&p).unwrap();
    p.dual_form = DualForm::PerOd;
    let b = estimate_cost(&p).unwrap();
    for (x, y) in a.cf.beta().iter().zip(b.cf.beta()) {
        assert!((x - y).abs() < 1e-5 * (1.0 + x.abs()), "{:?} vs {:?}", a.cf.beta(), b.cf.beta());
    }
}

#[test]
fn constant_latency_is_recovered_exactly() {
    let f = fixtures::interstate();
    let flat = CongestionFactor::constant();
    let sc = scenarios(&f, &flat, &[0.8, 1.2], 1e-12);
    let p = problem(sc, 1.0, 3, 100.0);
    let est = estimate_cost(&p).unwrap();
    // interior-point accuracy is about the square root of the tolerance
    assert!(sup_relative_error(&est.cf, &flat, est.observed_range) < 5e-3, "{:?}", est.cf.beta());
    let tight = QpOptions {
        tol: 1e-12,
        ..QpOptions::default()
    };
    let est = estimate_cost_with(&p, &tight).unwrap();
    assert!(sup_relative_error(&est.cf, &flat, est.observed_range) < 1e-5, "{:?}", est.cf.beta());
}

#[test]
fn free_flow_time_scaling_is_equivariant() {
    let f = fixtures::interstate();
    let sc = scenarios(&f, &f.cf, &[1.0], 1e-10);
    let base = estimate_cost(&problem(sc.clone(), 1.0, 4, 10.0)).unwrap();
    let s = 3.5;
    let scaled: Vec<Scenario> = sc
        .into_iter()
        .map(|x| {
            let net = x.network.map_links(|_, l| l.free_flow_time *= s).unwrap();
            Scenario::new(net, x.demand, x.flow).unwrap()
        })
        .collect();
    let est = estimate_cost(&problem(scaled, 1.0, 4, 10.0)).unwrap();
    for (a, b) in base.cf.beta().iter().zip(est.cf.beta()) {
        assert!((a - b).abs() < 1e-5 * (1.0 + a.abs()));
    }
    for (ya, yb) in base.prices[0].iter().zip(&est.prices[0]) {
        for (a, b) in ya.iter().zip(yb) {
            assert!((s * a - b).abs() < 1e-4 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn recovery_on_interstate() {
    let f = fixtures::interstate();
    let sc = scenarios(&f, &f.cf, &[0.8, 1.0, 1.2], 1e-10);
    let est = estimate_cost(&problem(sc.clone(), 1.5, 6, 1000.0)).unwrap();
    assert!(est.monotone_violation <= 1e-9);
    assert!(est.dual_violation <= 1e-6);
    let err = sup_relative_error(&est.cf, &f.cf, est.observed_range);
    assert!(err < 0.05, "sup relative error {err}");
    let forward = AssignOptions::fw(1e-8);
    for s in &sc {
        assert!(reproduction_error(s, &est.cf, &forward).unwrap() < 0.02);
    }
}

#[test]
fn cheap_slack_flattens_the_fit() {
    let f = fixtures::interstate();
    let sc = scenarios(&f, &f.cf, &[0.8, 1.2], 1e-10);
    let norm = |gamma| {
        let est = estimate_cost(&problem(sc.clone(), 1.0, 4, gamma)).unwrap();
        est.cf.beta()[1..].iter().map(|b| b * b).sum::<f64>()
    };
    assert!(norm(1e-6) <= norm(1e3) + 1e-12);
}

#[test]
fn cross_validation_picks_the_best_grid_point() {
    let f = fixtures::interstate();
    let sc = scenarios(&f, &f.cf, &[0.8, 0.9, 1.1, 1.2], 1e-10);
    let forward = AssignOptions::fw(1e-8);
    let single = [Hyper {
        scale: 1.0,
        degree: 4,
        gamma: 100.0,
    }];
    let cv = cross_validate(&sc, &single, 2, DualForm::PerOrigin, &forward).unwrap();
    assert_eq!(cv.best, single[0]);
    let direct = estimate_cost(&problem(sc.clone(), 1.0, 4, 100.0)).unwrap();
    assert_eq!(cv.estimate.cf.beta(), direct.cf.beta());

    let grid = [
        Hyper { scale: 1.0, degree: 1, gamma: 1e-3 },
        Hyper { scale: 1.5, degree: 4, gamma: 100.0 },
        Hyper { scale: 1.0, degree: 6, gamma: 1000.0 },
    ];
    let cv = cross_validate(&sc, &grid, 2, DualForm::PerOrigin, &forward).unwrap();
    let best = cv.scores.iter().map(|s| s.error).fold(f64::INFINITY, f64::min);
    let chosen = cv.scores.iter().find(|s| s.hyper == cv.best).unwrap();
    assert_eq!(chosen.error, best);
    assert_eq!(cv.folds, vec![vec![0, 2], vec![1, 3]]);
}

#[test]
fn invalid_hyperparameters() {
    let f = fixtures::interstate();
    let sc = scenarios(&f, &f.cf, &[1.0], 1e-6);
    assert!(build_inverse_qp(&problem(sc.clone(), 0.0, 3, 1.0)).is_err());
    assert!(build_inverse_qp(&problem(sc.clone(), 1.0, 0, 1.0)).is_err());
    assert!(build_inverse_qp(&problem(sc, 1.0, 3, -1.0)).is_err());
    assert!(build_inverse_qp(&problem(vec![], 1.0, 3, 1.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fits_are_monotone_and_dual_feasible(
        alpha in 0.05f64..1.0,
        power in 1usize..5,
        scale in 0.5f64..3.0,
        degree in 1usize..7,
        gamma in 0.1f64..1000.0,
    ) {
        let f = fixtures::interstate();
        let truth = CongestionFactor::bpr(alpha, power);
        let sc = scenarios(&f, &truth, &[0.9, 1.1], 1e-9);
        let est = estimate_cost(&problem(sc, scale, degree, gamma)).unwrap();
        prop_assert!(est.monotone_violation <= 1e-9);
        prop_assert!(est.dual_violation <= 1e-6 * (1.0 + est.cf.value(est.observed_range.1)));
        prop_assert!(est.epsilon.iter().all(|e| *e >= 0.0));
        // the realized gap can only be below the certified slack
        for (g, e) in est.realized_gap.iter().zip(&est.epsilon) {
            prop_assert!(*g <= e + 1e-6);
        }
    }
}
