#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wardrop::qp::QuadProgram;

/// A random convex QP together with an independent reference solution.
pub struct QpCase {
    pub name: String,
    pub program: QuadProgram,
    /// Closed-form minimizer when the case is a projection.
    pub exact: Option<Vec<f64>>,
    /// Box for the projected-gradient oracle, when the feasible set is one.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn identity_program(n: usize, p: &[f64]) -> QuadProgram {
    let mut qp = QuadProgram::new(n);
    for i in 0..n {
        qp.add_quadratic(i, i, 1.0);
    }
    qp.set_linear(p.iter().map(|v| -v).collect()).unwrap();
    qp
}

fn project_simplex(p: &[f64], total: f64) -> Vec<f64> {
    let mut s = p.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, v) in s.iter().enumerate() {
        acc += v;
        let t = (acc - total) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    p.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Fifty cases: projections onto boxes, halfspaces, simplices and affine
/// sets, then general PSD objectives (some singular) over boxes.
pub fn qp_suite(seed: u64) -> Vec<QpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for c in 0..10 {
        let n = rng.random_range(2..30);
        let p = random_vec(&mut rng, n, -3.0, 3.0);
        let lo = random_vec(&mut rng, n, -2.0, 0.0);
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..3.0)).collect();
        let mut qp = identity_program(n, &p);
        for i in 0..n {
            qp.set_lower_bound(i, lo[i]);
            qp.set_upper_bound(i, hi[i]);
        }
        let exact = (0..n).map(|i| p[i].clamp(lo[i], hi[i])).collect();
        cases.push(QpCase {
            name: format!("box-{c}"),
            program: qp,
            exact: Some(exact),
            bounds: Some((lo, hi)),
        });
    }
    for c in 0..10 {
        let n = rng.random_range(2..30);
        let p = random_vec(&mut rng, n, -3.0, 3.0);
        let a = random_vec(&mut rng, n, -1.0, 1.0);
        let b = rng.random_range(-1.0..1.0);
        let mut qp = identity_program(n, &p);
        let row: Vec<(usize, f64)> = a.iter().copied().enumerate().collect();
        qp.add_upper_inequality(&row, b);
        let ap: f64 = a.iter().zip(&p).map(|(x, y)| x * y).sum();
        let aa: f64 = a.iter().map(|x| x * x).sum();
        let shift = ((ap - b) / aa).max(0.0);
        let exact = p.iter().zip(&a).map(|(pi, ai)| pi - shift * ai).collect();
        cases.push(QpCase {
            name: format!("halfspace-{c}"),
            program: qp,
            exact: Some(exact),
            bounds: None,
        });
    }
    for c in 0..10 {
        let n = rng.random_range(2..40);
        let p = random_vec(&mut rng, n, -2.0, 2.0);
        let total = rng.random_range(0.5..5.0);
        let mut qp = identity_program(n, &p);
        let row: Vec<(usize, f64)> = (0..n).map(|i| (i, 1.0)).collect();
        qp.add_equality(&row, total);
        for i in 0..n {
            qp.set_lower_bound(i, 0.0);
        }
        cases.push(QpCase {
            name: format!("simplex-{c}"),
            program: qp,
            exact: Some(project_simplex(&p, total)),
            bounds: None,
        });
    }
    for c in 0..5 {
        let n = rng.random_range(4..25);
        let m = rng.random_range(1..n);
        let p = DVector::from_vec(random_vec(&mut rng, n, -3.0, 3.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_vec(random_vec(&mut rng, m, -1.0, 1.0));
        let mut qp = identity_program(n, p.as_slice());
        for r in 0..m {
            let row: Vec<(usize, f64)> = (0..n).map(|j| (j, a[(r, j)])).collect();
            qp.add_equality(&row, b[r]);
        }
        let aat = &a * a.transpose();
        let lambda = aat.lu().solve(&(&a * &p - &b)).expect("full row rank");
        let exact = &p - a.transpose() * lambda;
        cases.push(QpCase {
            name: format!("affine-{c}"),
            program: qp,
            exact: Some(exact.as_slice().to_vec()),
            bounds: None,
        });
    }
    for c in 0..15 {
        let n = rng.random_range(2..25);
        let rank = if c % 3 == 0 { rng.random_range(1..=n) } else { n };
        let m = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
        let q = m.transpose() * m;
        let lin = random_vec(&mut rng, n, -2.0, 2.0);
        let lo = random_vec(&mut rng, n, -2.0, 0.0);
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.5..3.0)).collect();
        let mut qp = QuadProgram::new(n);
        qp.set_quadratic(&q).unwrap();
        qp.set_linear(lin).unwrap();
        for i in 0..n {
            qp.set_lower_bound(i, lo[i]);
            qp.set_upper_bound(i, hi[i]);
        }
        cases.push(QpCase {
            name: format!("psd-box-{c}"),
            program: qp,
            exact: None,
            bounds: Some((lo, hi)),
        });
    }
    cases
}

/// Accelerated projected gradient over a box; returns the best objective.
pub fn projected_gradient(qp: &QuadProgram, lo: &[f64], hi: &[f64], iters: usize) -> (Vec<f64>, f64) {
    let q = qp.quadratic_dense();
    let lipschitz = q.symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lipschitz;
    let lin = DVector::from_column_slice(qp.linear());
    let clamp = |v: &DVector<f64>| DVector::from_fn(v.len(), |i, _| v[i].clamp(lo[i], hi[i]));
    let mut x = clamp(&DVector::zeros(lo.len()));
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = &q * &y + &lin;
        let next = clamp(&(&y - step * g));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + ((t - 1.0) / t_next) * (&next - &x);
        x = next;
        t = t_next;
    }
    let z = x.as_slice().to_vec();
    let f = qp.objective(&z);
    (z, f)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Equilibria of `fixture` under `cf` at each demand scaling, solved to
/// relative gap `tol`.
pub fn scenarios(
    fixture: &wardrop::fixtures::Fixture,
    cf: &wardrop::CongestionFactor,
    scalings: &[f64],
    tol: f64,
) -> Vec<wardrop::inverse::Scenario> {
    use wardrop::equilibrium::solve_ue_fw;
    scalings
        .iter()
        .map(|&s| {
            let demand = fixture.demand.scaled(s).unwrap();
            let r = solve_ue_fw(&fixture.network, &demand, cf, tol, 2000).unwrap();
            assert!(r.converged());
            wardrop::inverse::Scenario::new(fixture.network.clone(), demand, r.flow.link_flows).unwrap()
        })
        .collect()
}

/// `max |g(u) - f(u)| / f(u)` over a fine grid of `[lo, hi]`.
pub fn sup_relative_error(g: &wardrop::CongestionFactor, f: &wardrop::CongestionFactor, (lo, hi): (f64, f64)) -> f64 {
    (0..=2000)
        .map(|i| {
            let u = lo + (hi - lo) * i as f64 / 2000.0;
            (g.value(u) - f.value(u)).abs() / f.value(u)
        })
        .fold(0.0, f64::max)
}
