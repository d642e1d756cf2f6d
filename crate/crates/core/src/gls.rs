//! Initial OD demand by two-stage generalized least squares: route flows
//! `xi` from repeated link counts (P1), then a factorization `xi = P' g`
//! into route-choice probabilities and demand (P2).
//!
//! Route choice is taken as independent of congestion, so routes are
//! enumerated once at free-flow times.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{DemandVector, FlowState, Network};
use crate::paths::{route_cost, RouteSet};
use crate::qp::{solve_qp_with, KktResiduals, NormalSolver, QpOptions, QuadProgram};

/// Sample covariance of link flows and the ridge added to make it
/// invertible.
#[derive(Clone, Debug)]
pub struct SampleCovariance {
    /// `1/(K-1) sum_k (x_k - mean)(x_k - mean)'`
    pub raw: DMatrix<f64>,
    pub mean: Vec<f64>,
    /// Zero when `raw` is numerically positive definite.
    pub lambda: f64,
    pub samples: usize,
}

impl SampleCovariance {
    /// `raw + lambda I`
    pub fn regularized(&self) -> DMatrix<f64> {
        let n = self.raw.nrows();
        &self.raw + DMatrix::identity(n, n) * self.lambda
    }
}

fn check_observations(observations: &[FlowState]) -> Result<usize> {
    let links = observations
        .first()
        .map(|o| o.link_flows.len())
        .ok_or_else(|| Error::InsufficientData("no observations".into()))?;
    if observations.iter().any(|o| o.link_flows.len() != links) {
        return Err(Error::Dimension("observations differ in link count".into()));
    }
    Ok(links)
}

/// Sample covariance with a ridge `lambda = 1e-6 trace(S) / |A|` (or `1e-6`
/// when the trace is zero) whenever the smallest eigenvalue is not above
/// `1e-12` times the largest.
pub fn sample_covariance(observations: &[FlowState]) -> Result<SampleCovariance> {
    let links = check_observations(observations)?;
    let k = observations.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!("covariance needs at least 2 observations, got {k}")));
    }
    let mut mean = vec![0.0; links];
    for o in observations {
        for (m, x) in mean.iter_mut().zip(&o.link_flows) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let mut raw = DMatrix::zeros(links, links);
    for o in observations {
        let d = DVector::from_iterator(links, o.link_flows.iter().zip(&mean).map(|(x, m)| x - m));
        raw.ger(1.0, &d, &d, 1.0);
    }
    raw /= (k - 1) as f64;
    let raw = symmetrize(&raw);

    let eig = SymmetricEigen::new(raw.clone()).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(0.0f64, f64::max);
    let lambda = if links > 0 && lo <= 1e-12 * hi {
        let trace = raw.trace();
        if trace > 0.0 {
            1e-6 * trace / links as f64
        } else {
            1e-6
        }
    } else {
        0.0
    };
    Ok(SampleCovariance {
        raw,
        mean,
        lambda,
        samples: k,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[derive(Clone, Debug, Serialize)]
pub struct P1Solution {
    /// Route flows, stacked in [`RouteSet::iter`] order.
    pub xi: Vec<f64>,
    /// `(K/2) xi'Q xi - b'xi`
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
    pub warnings: Vec<String>,
}

/// The (P1) program `min (K/2) xi' A'S^-1 A xi - b'xi` over `xi >= 0`.
pub fn p1_program(covariance: &DMatrix<f64>, routes: &RouteSet, observations: &[FlowState]) -> Result<QuadProgram> {
    let links = check_observations(observations)?;
    if covariance.nrows() != links || covariance.ncols() != links || routes.link_count() != links {
        return Err(Error::Dimension("covariance, routes and observations disagree on link count".into()));
    }
    let k = observations.len() as f64;
    let chol = Cholesky::new(covariance.clone())
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
    let a = routes.incidence();
    let sinv_a = chol.solve(&a);
    let q = a.transpose() * &sinv_a * k;
    let mut total = DVector::zeros(links);
    for o in observations {
        total += DVector::from_column_slice(&o.link_flows);
    }
    let b = sinv_a.transpose() * total;
    let mut p = QuadProgram::new(routes.route_count());
    p.set_quadratic(&symmetrize(&q))?;
    p.set_linear(b.iter().map(|v| -v).collect())?;
    for r in 0..routes.route_count() {
        p.set_lower_bound(r, 0.0);
    }
    Ok(p)
}

pub fn solve_p1(covariance: &DMatrix<f64>, routes: &RouteSet, observations: &[FlowState]) -> Result<P1Solution> {
    let p = p1_program(covariance, routes, observations)?;
    if p.dim() == 0 {
        return Ok(P1Solution {
            xi: Vec::new(),
            objective: 0.0,
            iterations: 0,
            kkt: KktResiduals::default(),
            warnings: Vec::new(),
        });
    }
    let sol = solve_qp_with(
        &p,
        &QpOptions {
            solver: NormalSolver::Dense,
            ..QpOptions::default()
        },
    )?;
    Ok(P1Solution {
        xi: sol.z.iter().map(|v| v.max(0.0)).collect(),
        objective: sol.objective,
        iterations: sol.iterations,
        kkt: sol.residuals,
        warnings: sol.warnings,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct P2Solution {
    /// Route-choice probabilities per OD pair, aligned with the route set.
    pub choice: Vec<Vec<f64>>,
    pub demand: DemandVector,
    /// `|P'g - xi|`
    pub residual: f64,
    pub rounds: usize,
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

fn logit(costs: &[f64]) -> Vec<f64> {
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = costs.iter().map(|c| (-(c - lo)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn p2_residual(choice: &[Vec<f64>], g: &[f64], xi: &[Vec<f64>]) -> f64 {
    choice
        .iter()
        .zip(g)
        .zip(xi)
        .flat_map(|((p, gi), x)| p.iter().zip(x).map(move |(pr, xr)| (pr * gi - xr).powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// Least-norm factorization `P'g = xi` with `P` row-stochastic on the
/// enumerated routes. Alternates a nonnegative least-squares step in `g`
/// with a simplex-constrained least-squares step in each row of `P`,
/// starting from a logit split of the route costs with unit scale.
pub fn solve_p2(xi: &[f64], routes: &RouteSet, route_costs: &[f64]) -> Result<P2Solution> {
    const MAX_ROUNDS: usize = 100;
    let total = routes.route_count();
    if xi.len() != total || route_costs.len() != total {
        return Err(Error::Dimension(format!(
            "{} routes but {} flows and {} costs",
            total,
            xi.len(),
            route_costs.len()
        )));
    }
    if let Some(v) = xi.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::NegativeArgument(*v));
    }
    let mut split = Vec::with_capacity(routes.od_count());
    let mut choice = Vec::with_capacity(routes.od_count());
    let mut at = 0;
    for rs in &routes.routes {
        split.push(xi[at..at + rs.len()].to_vec());
        choice.push(logit(&route_costs[at..at + rs.len()]));
        at += rs.len();
    }
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut g = vec![0.0; routes.od_count()];
    let mut residual = f64::INFINITY;
    let mut rounds = 0;
    while rounds < MAX_ROUNDS {
        rounds += 1;
        for ((gi, p), x) in g.iter_mut().zip(&choice).zip(&split) {
            let pp: f64 = p.iter().map(|v| v * v).sum();
            let px: f64 = p.iter().zip(x).map(|(a, b)| a * b).sum();
            *gi = if pp > 0.0 { (px / pp).max(0.0) } else { 0.0 };
        }
        for ((p, &gi), x) in choice.iter_mut().zip(&g).zip(&split) {
            if gi > 0.0 && !p.is_empty() {
                *p = project_simplex(&x.iter().map(|v| v / gi).collect::<Vec<_>>());
            }
        }
        let next = p2_residual(&choice, &g, &split);
        let improvement = residual - next;
        residual = next;
        if residual <= 1e-14 * (1.0 + norm) || improvement < 1e-8 {
            break;
        }
    }
    let tolerance = 1e-6 * (1.0 + norm);
    if !(residual <= tolerance) {
        let worst = choice
            .iter()
            .zip(&g)
            .zip(&split)
            .flat_map(|((p, gi), x)| p.iter().zip(x).map(move |(pr, xr)| (pr * gi - xr).abs()))
            .fold(0.0, f64::max);
        return Err(Error::Factorization(worst));
    }
    Ok(P2Solution {
        choice,
        demand: DemandVector::new(g)?,
        residual,
        rounds,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GlsEstimate {
    pub demand: DemandVector,
    pub routes: RouteSet,
    pub covariance_ridge: f64,
    pub p1: P1Solution,
    pub p2: P2Solution,
}

/// Covariance, (P1) and (P2) in sequence with `k_routes` shortest simple
/// routes per OD pair at free-flow times.
pub fn estimate_initial_demand(network: &Network, observations: &[FlowState], k_routes: usize) -> Result<GlsEstimate> {
    if k_routes == 0 {
        return Err(Error::InvalidArgument("k_routes must be at least 1".into()));
    }
    let links = check_observations(observations)?;
    if links != network.link_count() {
        return Err(Error::Dimension(format!(
            "observations have {links} links, network {}",
            network.link_count()
        )));
    }
    let t0 = network.free_flow_times();
    let routes = RouteSet::k_shortest(network, k_routes, &t0)?;
    let cov = sample_covariance(observations)?;
    let p1 = solve_p1(&cov.regularized(), &routes, observations)?;
    let costs: Vec<f64> = routes.iter().map(|(_, r)| route_cost(r, &t0)).collect();
    let p2 = solve_p2(&p1.xi, &routes, &costs)?;
    Ok(GlsEstimate {
        demand: p2.demand.clone(),
        routes,
        covariance_ridge: cov.lambda,
        p1,
        p2,
    })
}
