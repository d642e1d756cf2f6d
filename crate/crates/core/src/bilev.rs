//! OD demand adjustment: minimize `F(g) = sum_a (x_a(g) - x~_a)^2` over
//! `g >= 0`, where `x(g)` is the equilibrium flow, by projected gradient
//! steps with a geometric line search.
//!
//! The Jacobian `dx_a/dg_i` is approximated by the indicator of link `a` on
//! the current shortest route of OD pair `i`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{assign, AssignOptions, CostKind};
use crate::error::{Error, Result};
use crate::latency::CongestionFactor;
use crate::network::{DemandVector, Network, OdPair};
use crate::paths::shortest_routes;

/// Link times at which the shortest routes of the Jacobian are taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianTimes {
    /// `t_a(x_a(g))`, the equilibrium times.
    #[default]
    Congested,
    FreeFlow,
}

#[derive(Clone, Debug, Serialize)]
pub struct BilevParams {
    /// Line-search ratio, at least 2.
    pub rho: u32,
    /// Number of step reductions, at least 1.
    pub t: u32,
    pub eps1: f64,
    pub eps2: f64,
    /// Outer iteration cap.
    pub max_iter: usize,
    pub inner: AssignOptions,
    pub jacobian: JacobianTimes,
}

impl Default for BilevParams {
    fn default() -> Self {
        Self {
            rho: 2,
            t: 10,
            eps1: 0.0,
            eps2: 1e-20,
            max_iter: 10,
            inner: AssignOptions {
                track_routes: false,
                ..AssignOptions::msa(1e-6)
            },
            jacobian: JacobianTimes::Congested,
        }
    }
}

impl BilevParams {
    fn validate(&self) -> Result<()> {
        if self.rho < 2 {
            return Err(Error::InvalidArgument(format!("rho must be at least 2, got {}", self.rho)));
        }
        if self.t < 1 {
            return Err(Error::InvalidArgument("T must be at least 1".into()));
        }
        if !(self.eps1 >= 0.0) || !(self.eps2 > 0.0) {
            return Err(Error::InvalidArgument("eps1 must be >= 0 and eps2 > 0".into()));
        }
        Ok(())
    }
}

/// Why the adjustment stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BilevTermination {
    /// `F` reached zero.
    ZeroObjective,
    /// Relative decrease below `eps2`.
    SmallDecrease,
    /// The gated direction vanished.
    Stationary,
    IterationCap,
}

#[derive(Clone, Debug, Serialize)]
pub struct BilevRun {
    pub params: BilevParams,
    /// Seed of the perturbation that produced `g^0`, when known.
    pub seed: Option<u64>,
    /// `g^l` for every accepted iterate, starting with `g^0`.
    pub demands: Vec<Vec<f64>>,
    /// `F(g^l)`, aligned with `demands`.
    pub objective: Vec<f64>,
    /// Accepted step `theta^l` and the largest feasible step per iteration.
    pub steps: Vec<f64>,
    pub theta_max: Vec<f64>,
    pub termination: BilevTermination,
    pub wall_time_secs: f64,
}

impl BilevRun {
    /// `F(g^l) / F(g^0)`.
    pub fn normalized_objective(&self) -> Vec<f64> {
        let f0 = self.objective[0];
        self.objective
            .iter()
            .map(|f| if f0 > 0.0 { f / f0 } else { 0.0 })
            .collect()
    }

    /// `|g^l - truth| / |truth|`.
    pub fn demand_distance(&self, truth: &DemandVector) -> Result<Vec<f64>> {
        if truth.len() != self.demands[0].len() {
            return Err(Error::Dimension("reference demand has the wrong length".into()));
        }
        let norm = truth.norm();
        Ok(self
            .demands
            .iter()
            .map(|g| {
                let d = g
                    .iter()
                    .zip(truth.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if norm > 0.0 {
                    d / norm
                } else {
                    d
                }
            })
            .collect())
    }

    /// Normalized objective after `l` iterations, or the last one if the
    /// run stopped earlier.
    pub fn normalized_objective_at(&self, l: usize) -> f64 {
        let n = self.normalized_objective();
        n[l.min(n.len() - 1)]
    }
}

fn squared_error(x: &[f64], target: &[f64]) -> f64 {
    x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_target(network: &Network, target: &[f64]) -> Result<()> {
    if target.len() != network.link_count() {
        return Err(Error::Dimension(format!(
            "{} target flows for {} links",
            target.len(),
            network.link_count()
        )));
    }
    Ok(())
}

/// Equilibrium link flows `x(g)` under the inner solver settings.
pub fn equilibrium_flows(
    network: &Network,
    cf: &CongestionFactor,
    demand: &DemandVector,
    inner: &AssignOptions,
) -> Result<Vec<f64>> {
    Ok(assign(network, demand, cf, CostKind::Travel, inner)?.flow.link_flows)
}

/// `F(g) = |x(g) - x~|^2`.
pub fn bilev_objective(
    network: &Network,
    cf: &CongestionFactor,
    demand: &DemandVector,
    target: &[f64],
    inner: &AssignOptions,
) -> Result<f64> {
    check_target(network, target)?;
    Ok(squared_error(&equilibrium_flows(network, cf, demand, inner)?, target))
}

/// Shortest route of every OD pair at the chosen link times; the support of
/// each Jacobian row.
pub fn shortest_route_jacobian(
    network: &Network,
    cf: &CongestionFactor,
    flow: &[f64],
    times: JacobianTimes,
) -> Result<Vec<Vec<usize>>> {
    check_target(network, flow)?;
    let costs: Vec<f64> = match times {
        JacobianTimes::Congested => network
            .links()
            .iter()
            .zip(flow)
            .map(|(l, &x)| cf.travel_time(l.free_flow_time, l.capacity, x))
            .collect::<Result<_>>()?,
        JacobianTimes::FreeFlow => network.free_flow_times(),
    };
    Ok(shortest_routes(network, &costs)?.into_iter().map(|r| r.links).collect())
}

/// `dF/dg_i = 2 sum_{a in r_i} (x_a - x~_a)` at the equilibrium flow `flow`.
pub fn gradient_at(
    network: &Network,
    cf: &CongestionFactor,
    flow: &[f64],
    target: &[f64],
    times: JacobianTimes,
) -> Result<Vec<f64>> {
    check_target(network, target)?;
    let routes = shortest_route_jacobian(network, cf, flow, times)?;
    Ok(routes
        .iter()
        .map(|r| r.iter().map(|&a| 2.0 * (flow[a] - target[a])).sum())
        .collect())
}

/// Solves the inner equilibrium at `g` and returns the surrogate gradient.
pub fn bilev_gradient(
    network: &Network,
    cf: &CongestionFactor,
    demand: &DemandVector,
    target: &[f64],
    params: &BilevParams,
) -> Result<Vec<f64>> {
    let x = equilibrium_flows(network, cf, demand, &params.inner)?;
    gradient_at(network, cf, &x, target, params.jacobian)
}

/// Gated search direction: components with `g_i <= eps1` that would
/// decrease further are zeroed.
fn search_direction(g: &[f64], h: &[f64], eps1: f64) -> Vec<f64> {
    g.iter()
        .zip(h)
        .map(|(&gi, &hi)| if gi > eps1 || hi > 0.0 { hi } else { 0.0 })
        .collect()
}

/// Adjusts `g0` toward demand whose equilibrium reproduces `target`.
pub fn adjust_demand(
    network: &Network,
    cf: &CongestionFactor,
    g0: &DemandVector,
    target: &[f64],
    params: &BilevParams,
) -> Result<(DemandVector, BilevRun)> {
    params.validate()?;
    g0.check_len(network)?;
    check_target(network, target)?;
    let start = Instant::now();
    let g0_max = g0.values().iter().copied().fold(0.0, f64::max);

    let mut g = g0.values().to_vec();
    let mut x = equilibrium_flows(network, cf, g0, &params.inner)?;
    let mut f = squared_error(&x, target);
    let mut run = BilevRun {
        params: params.clone(),
        seed: None,
        demands: vec![g.clone()],
        objective: vec![f],
        steps: Vec::new(),
        theta_max: Vec::new(),
        termination: BilevTermination::IterationCap,
        wall_time_secs: 0.0,
    };
    let f0 = f;
    if f0 == 0.0 {
        run.termination = BilevTermination::ZeroObjective;
    }

    let mut iterations = 0;
    while run.termination == BilevTermination::IterationCap && iterations < params.max_iter {
        iterations += 1;
        let grad = gradient_at(network, cf, &x, target, params.jacobian)?;
        let h: Vec<f64> = grad.iter().map(|v| -v).collect();
        let hbar = search_direction(&g, &h, params.eps1);
        let hmax = hbar.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if hmax == 0.0 {
            run.termination = BilevTermination::Stationary;
            break;
        }
        let theta_max = g
            .iter()
            .zip(&hbar)
            .filter(|(_, &hi)| hi < 0.0)
            .map(|(&gi, &hi)| -gi / hi)
            .fold(f64::INFINITY, f64::min);
        let theta_max = if theta_max.is_finite() {
            theta_max
        } else {
            g0_max / (1.0 + hmax)
        };

        let candidates: Vec<f64> = (0..=params.t)
            .map(|j| theta_max / (params.rho as f64).powi(j as i32))
            .collect();
        let trials = candidates
            .par_iter()
            .map(|&theta| {
                let gt: Vec<f64> = g.iter().zip(&hbar).map(|(a, b)| (a + theta * b).max(0.0)).collect();
                let demand = DemandVector::new(gt.clone())?;
                let xt = equilibrium_flows(network, cf, &demand, &params.inner)?;
                let ft = squared_error(&xt, target);
                Ok((theta, gt, xt, ft))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64)> = None;
        for trial in trials {
            if trial.3 < best.as_ref().map_or(f, |b| b.3) {
                best = Some(trial);
            }
        }
        run.theta_max.push(theta_max);
        match best {
            None => {
                run.steps.push(0.0);
                run.termination = BilevTermination::SmallDecrease;
            }
            Some((theta, gt, xt, ft)) => {
                let decrease = (f - ft) / f0;
                g = gt;
                x = xt;
                f = ft;
                run.steps.push(theta);
                run.demands.push(g.clone());
                run.objective.push(f);
                if f == 0.0 {
                    run.termination = BilevTermination::ZeroObjective;
                } else if decrease < params.eps2 {
                    run.termination = BilevTermination::SmallDecrease;
                }
            }
        }
    }
    run.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((DemandVector::new(g)?, run))
}

/// Scales every OD demand by an independent `uniform[low, high]` factor.
pub fn perturb_demand(demand: &DemandVector, low: f64, high: f64, seed: u64) -> Result<DemandVector> {
    if !(0.0 <= low && low <= high && high.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad perturbation range [{low}, {high}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(low, high).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    DemandVector::new(demand.values().iter().map(|g| g * dist.sample(&mut rng)).collect())
}

/// Places each subnetwork demand into the OD index space of `full` (zeros
/// for pairs outside the subnetwork) and averages the results. Nodes are
/// matched by id.
pub fn compose_landmark_demand(full: &Network, parts: &[(&Network, &DemandVector)]) -> Result<DemandVector> {
    if parts.is_empty() {
        return Err(Error::InsufficientData("no subnetwork demands".into()));
    }
    let mut total = vec![0.0; full.od_count()];
    for (sub, demand) in parts {
        demand.check_len(sub)?;
        for (od, &d) in sub.od_pairs().iter().zip(demand.values()) {
            let lift = |v: usize| {
                full.node_index(sub.node_id(v))
                    .ok_or_else(|| Error::InvalidArgument(format!("node {} is not in the full network", sub.node_id(v))))
            };
            let mapped = OdPair {
                origin: lift(od.origin)?,
                destination: lift(od.destination)?,
            };
            let w = full.od_index(mapped).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "OD pair ({}, {}) is not an OD pair of the full network",
                    sub.node_id(od.origin),
                    sub.node_id(od.destination)
                ))
            })?;
            total[w] += d;
        }
    }
    let n = parts.len() as f64;
    DemandVector::new(total.into_iter().map(|v| v / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn gating() {
        let d = search_direction(&[0.0, 0.0, 1.0], &[-1.0, 2.0, -3.0], 0.0);
        assert_eq!(d, vec![0.0, 2.0, -3.0]);
    }

    #[test]
    fn zero_objective_stops_immediately() {
        let f = fixtures::line(3, 50.0);
        let params = BilevParams::default();
        let x = equilibrium_flows(&f.network, &f.cf, &f.demand, &params.inner).unwrap();
        let (g, run) = adjust_demand(&f.network, &f.cf, &f.demand, &x, &params).unwrap();
        assert_eq!(g, f.demand);
        assert_eq!(run.termination, BilevTermination::ZeroObjective);
        assert_eq!(run.objective, vec![0.0]);
    }

    #[test]
    fn single_route_gradient() {
        let f = fixtures::line(2, 10.0);
        let g = gradient_at(&f.network, &f.cf, &[10.0, 10.0], &[7.0, 12.0], JacobianTimes::Congested).unwrap();
        assert_eq!(g, vec![2.0 * (3.0 - 2.0)]);
    }

    #[test]
    fn perturbation_is_seeded() {
        let g = DemandVector::new(vec![100.0; 50]).unwrap();
        let a = perturb_demand(&g, 0.8, 1.2, 7).unwrap();
        assert_eq!(a, perturb_demand(&g, 0.8, 1.2, 7).unwrap());
        assert_ne!(a, perturb_demand(&g, 0.8, 1.2, 8).unwrap());
        assert!(a.values().iter().all(|&v| (80.0..=120.0).contains(&v)));
    }
}
