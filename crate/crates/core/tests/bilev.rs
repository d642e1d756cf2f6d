use proptest::prelude::*;
use wardrop::bilev::{
    adjust_demand, bilev_objective, compose_landmark_demand, equilibrium_flows, gradient_at, perturb_demand, BilevParams,
    BilevTermination, JacobianTimes,
};
use wardrop::equilibrium::AssignOptions;
use wardrop::{fixtures, CongestionFactor, DemandVector, Link, Network, OdPair};

fn fw_params(max_iter: usize) -> BilevParams {
    BilevParams {
        max_iter,
        inner: AssignOptions {
            track_routes: false,
            ..AssignOptions::fw(1e-8)
        },
        ..BilevParams::default()
    }
}

#[test]
fn target_flows_give_zero_objective() {
    let f = fixtures::interstate();
    let params = fw_params(5);
    let x = equilibrium_flows(&f.network, &f.cf, &f.demand, &params.inner).unwrap();
    assert_eq!(bilev_objective(&f.network, &f.cf, &f.demand, &x, &params.inner).unwrap(), 0.0);
    let (g, run) = adjust_demand(&f.network, &f.cf, &f.demand, &x, &params).unwrap();
    assert_eq!(g, f.demand);
    assert_eq!(run.termination, BilevTermination::ZeroObjective);
}

#[test]
fn zero_demand_leaves_the_target_norm() {
    let f = fixtures::interstate();
    let target: Vec<f64> = (0..24).map(|a| 10.0 + a as f64).collect();
    let zero = DemandVector::zeros(f.network.od_count());
    let v = bilev_objective(&f.network, &f.cf, &zero, &target, &AssignOptions::fw(1e-8)).unwrap();
    assert_eq!(v, target.iter().map(|t| t * t).sum::<f64>());
}

#[test]
fn gradient_is_exact_under_constant_latency() {
    // equilibrium flows are linear in demand, so F is quadratic
    let f = fixtures::interstate();
    let flat = CongestionFactor::constant();
    let inner = AssignOptions::fw(1e-10);
    let target: Vec<f64> = (0..24).map(|a| 500.0 + 40.0 * a as f64).collect();
    let x = equilibrium_flows(&f.network, &flat, &f.demand, &inner).unwrap();
    let grad = gradient_at(&f.network, &flat, &x, &target, JacobianTimes::Congested).unwrap();
    let free = gradient_at(&f.network, &flat, &x, &target, JacobianTimes::FreeFlow).unwrap();
    assert_eq!(grad, free);
    let objective = |g: &[f64]| bilev_objective(&f.network, &flat, &DemandVector::new(g.to_vec()).unwrap(), &target, &inner).unwrap();
    let h = 5.0;
    for i in (0..f.network.od_count()).step_by(5) {
        let mut up = f.demand.values().to_vec();
        let mut down = up.clone();
        up[i] += h;
        down[i] -= h;
        let fd = (objective(&up) - objective(&down)) / (2.0 * h);
        assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + grad[i].abs()), "od {i}: {fd} vs {}", grad[i]);
    }
}

#[test]
fn first_step_descends_on_sioux_falls() {
    let sf = fixtures::sioux_falls();
    let params = fw_params(1);
    let target = equilibrium_flows(&sf.network, &sf.cf, &sf.demand, &params.inner).unwrap();
    let g0 = perturb_demand(&sf.demand, 0.8, 1.2, 3).unwrap();
    let (_, run) = adjust_demand(&sf.network, &sf.cf, &g0, &target, &params).unwrap();
    assert_eq!(run.objective.len(), 2);
    assert!(run.objective[1] < run.objective[0]);
    assert!(run.steps[0] > 0.0 && run.steps[0] <= run.theta_max[0]);
}

fn two_way(pairs: &[(usize, usize)]) -> Vec<Link> {
    pairs
        .iter()
        .flat_map(|&(a, b)| {
            [(a, b), (b, a)].map(|(tail, head)| Link {
                tail,
                head,
                free_flow_time: 1.0,
                capacity: 100.0,
            })
        })
        .collect()
}

#[test]
fn landmark_demands_are_lifted_and_averaged() {
    let od = |origin, destination| OdPair { origin, destination };
    let full = Network::new(vec![10, 20, 30, 40], two_way(&[(0, 1), (1, 2), (2, 3)]), vec![od(0, 2), od(1, 3), od(0, 3)]).unwrap();
    let west = Network::new(vec![10, 20, 30], two_way(&[(0, 1), (1, 2)]), vec![od(0, 2)]).unwrap();
    let east = Network::new(vec![20, 30, 40], two_way(&[(0, 1), (1, 2)]), vec![od(0, 2)]).unwrap();
    let gw = DemandVector::new(vec![8.0]).unwrap();
    let ge = DemandVector::new(vec![6.0]).unwrap();
    let g = compose_landmark_demand(&full, &[(&west, &gw), (&east, &ge)]).unwrap();
    assert_eq!(g.values(), &[4.0, 3.0, 0.0]);

    let stray = Network::new(vec![10, 20, 50], two_way(&[(0, 1), (1, 2)]), vec![od(0, 2)]).unwrap();
    assert!(compose_landmark_demand(&full, &[(&stray, &gw)]).is_err());
    let reversed = Network::new(vec![10, 20, 30], two_way(&[(0, 1), (1, 2)]), vec![od(2, 0)]).unwrap();
    assert!(compose_landmark_demand(&full, &[(&reversed, &gw)]).is_err());
    assert!(compose_landmark_demand(&full, &[]).is_err());
}

#[test]
fn invalid_parameters_are_rejected() {
    let f = fixtures::line(2, 10.0);
    let target = vec![10.0, 10.0];
    let bad = [
        BilevParams { rho: 1, ..BilevParams::default() },
        BilevParams { t: 0, ..BilevParams::default() },
        BilevParams { eps2: 0.0, ..BilevParams::default() },
        BilevParams { eps1: -1.0, ..BilevParams::default() },
    ];
    for p in &bad {
        assert!(adjust_demand(&f.network, &f.cf, &f.demand, &target, p).is_err());
    }
    assert!(adjust_demand(&f.network, &f.cf, &f.demand, &[1.0], &BilevParams::default()).is_err());
    assert!(perturb_demand(&f.demand, 1.2, 0.8, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn runs_stay_feasible_and_monotone(seed in 0u64..1000, low in 0.3f64..1.0, spread in 0.0f64..0.8) {
        let f = fixtures::interstate();
        let params = fw_params(4);
        let target = equilibrium_flows(&f.network, &f.cf, &f.demand, &params.inner).unwrap();
        let g0 = perturb_demand(&f.demand, low, low + spread, seed).unwrap();
        let (g, run) = adjust_demand(&f.network, &f.cf, &g0, &target, &params).unwrap();
        prop_assert!(g.values().iter().all(|v| *v >= 0.0));
        prop_assert!(run.demands.iter().flatten().all(|v| *v >= 0.0));
        prop_assert!(run.objective.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(run.demands.len(), run.objective.len());
        prop_assert_eq!(run.steps.len(), run.theta_max.len());
        let norm = run.normalized_objective();
        prop_assert_eq!(norm[0], 1.0);
        prop_assert!(norm.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
