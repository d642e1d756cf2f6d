//! Total latency, price of anarchy and sensitivity of the optimal Beckmann
//! value to free-flow times and capacities.
//!
//! The sensitivities are taken at the user-equilibrium flow `x*` that
//! minimizes the Beckmann potential `V`. They describe `V`, not the total
//! latency `L`.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{assign, AssignOptions, CostKind, SolverReport, DEFAULT_FW_MAX_ITER};
use crate::error::{Error, Result};
use crate::latency::CongestionFactor;
use crate::network::{DemandVector, Network};

/// `L(x) = sum_a x_a t_a(x_a)`.
pub fn total_latency(network: &Network, cf: &CongestionFactor, flow: &[f64]) -> Result<f64> {
    Ok(link_latencies(network, cf, flow)?.iter().sum())
}

fn link_latencies(network: &Network, cf: &CongestionFactor, flow: &[f64]) -> Result<Vec<f64>> {
    if flow.len() != network.link_count() {
        return Err(Error::Dimension(format!(
            "{} flows for {} links",
            flow.len(),
            network.link_count()
        )));
    }
    network
        .links()
        .iter()
        .zip(flow)
        .map(|(l, &x)| Ok(x * cf.travel_time(l.free_flow_time, l.capacity, x)?))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PoaReport {
    pub latency_ne: f64,
    pub latency_so: f64,
    /// `None` when the social optimum has zero latency (zero demand).
    pub poa: Option<f64>,
    pub link_latency_ne: Vec<f64>,
    pub link_latency_so: Vec<f64>,
    pub so_relative_gap: f64,
}

/// `L(x_ne) / L(x_so)`. `ne_flow` supplies observed equilibrium flows;
/// otherwise the user equilibrium is solved to relative gap `tol`.
pub fn price_of_anarchy(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    ne_flow: Option<&[f64]>,
    tol: f64,
) -> Result<PoaReport> {
    let ne: Vec<f64> = match ne_flow {
        Some(x) => x.to_vec(),
        None => {
            let opts = AssignOptions {
                track_routes: false,
                ..AssignOptions::fw(tol)
            };
            assign(network, demand, cf, CostKind::Travel, &opts)?.flow.link_flows
        }
    };
    let so_opts = AssignOptions {
        track_routes: false,
        ..AssignOptions::fw(tol)
    };
    let so = assign(network, demand, cf, CostKind::Marginal, &so_opts)?;
    let link_latency_ne = link_latencies(network, cf, &ne)?;
    let link_latency_so = link_latencies(network, cf, &so.flow.link_flows)?;
    let latency_ne: f64 = link_latency_ne.iter().sum();
    let latency_so: f64 = link_latency_so.iter().sum();
    Ok(PoaReport {
        latency_ne,
        latency_so,
        poa: (latency_so > 0.0).then(|| latency_ne / latency_so),
        link_latency_ne,
        link_latency_so,
        so_relative_gap: so.relative_gap,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LinkSensitivity {
    pub link: usize,
    pub flow: f64,
    pub d_free_flow_time: f64,
    pub d_capacity: f64,
    pub scaled_d_free_flow_time: f64,
    pub scaled_d_capacity: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SensitivityReport {
    pub links: Vec<LinkSensitivity>,
    /// Optimal Beckmann value `V`.
    pub value: f64,
    pub relative_gap: f64,
}

/// Closed-form partials of `V` at the flow `x`:
/// `dV/dt0 = m F(x/m)` and `dV/dm = -t0 sum_i i beta_i x^(i+1) / ((i+1) m^(i+1))`.
pub fn sensitivity_at(network: &Network, cf: &CongestionFactor, x: &[f64]) -> Result<Vec<LinkSensitivity>> {
    if x.len() != network.link_count() {
        return Err(Error::Dimension("flow does not match the network".into()));
    }
    let beta = cf.beta();
    let mut out: Vec<LinkSensitivity> = network
        .links()
        .iter()
        .zip(x)
        .enumerate()
        .map(|(a, (l, &xa))| {
            let u = xa / l.capacity;
            let dt0 = l.capacity * cf.integral(u);
            let mut dm = 0.0;
            let mut upow = u * u;
            for (i, &b) in beta.iter().enumerate().skip(1) {
                dm -= i as f64 * b * upow / (i + 1) as f64;
                upow *= u;
            }
            LinkSensitivity {
                link: a,
                flow: xa,
                d_free_flow_time: dt0,
                d_capacity: l.free_flow_time * dm,
                scaled_d_free_flow_time: 0.0,
                scaled_d_capacity: 0.0,
            }
        })
        .collect();
    let max_t = out.iter().fold(0.0f64, |m, s| m.max(s.d_free_flow_time.abs()));
    let max_m = out.iter().fold(0.0f64, |m, s| m.max(s.d_capacity.abs()));
    for s in &mut out {
        if max_t > 0.0 {
            s.scaled_d_free_flow_time = s.d_free_flow_time / max_t;
        }
        if max_m > 0.0 {
            s.scaled_d_capacity = s.d_capacity / max_m;
        }
    }
    Ok(out)
}

/// Solves the user equilibrium to relative gap `tol` and evaluates the
/// closed-form partials there.
pub fn sensitivity(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    tol: f64,
) -> Result<(SensitivityReport, SolverReport)> {
    let opts = AssignOptions {
        track_routes: false,
        max_iter: DEFAULT_FW_MAX_ITER,
        ..AssignOptions::fw(tol)
    };
    let ue = assign(network, demand, cf, CostKind::Travel, &opts)?;
    let links = sensitivity_at(network, cf, &ue.flow.link_flows)?;
    Ok((
        SensitivityReport {
            links,
            value: ue.objective,
            relative_gap: ue.relative_gap,
        },
        ue,
    ))
}

/// Which link parameter a finite difference perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parameter {
    FreeFlowTime,
    Capacity,
}

/// Central finite difference of the optimal Beckmann value with respect to
/// one link parameter, re-solving from the extreme points of `base`.
pub fn value_finite_difference(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    base: &SolverReport,
    link: usize,
    parameter: Parameter,
    relative_step: f64,
    tol: f64,
) -> Result<f64> {
    let l = network
        .links()
        .get(link)
        .ok_or_else(|| Error::InvalidArgument(format!("no link {link}")))?;
    let p0 = match parameter {
        Parameter::FreeFlowTime => l.free_flow_time,
        Parameter::Capacity => l.capacity,
    };
    let h = relative_step * p0;
    let values = [p0 + h, p0 - h]
        .par_iter()
        .map(|&p| {
            let net = network.map_links(|a, lk| {
                if a == link {
                    match parameter {
                        Parameter::FreeFlowTime => lk.free_flow_time = p,
                        Parameter::Capacity => lk.capacity = p,
                    }
                }
            })?;
            let opts = AssignOptions {
                track_routes: false,
                ..AssignOptions::fw(tol)
            };
            Ok(crate::equilibrium::assign_warm(&net, demand, cf, CostKind::Travel, &opts, base)?.objective)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((values[0] - values[1]) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn pigou_price_of_anarchy() {
        let f = fixtures::pigou();
        let r = price_of_anarchy(&f.network, &f.demand, &f.cf, None, 1e-10).unwrap();
        assert_relative_eq!(r.latency_ne, 1.0, epsilon = 1e-6);
        assert_relative_eq!(r.latency_so, 0.75, epsilon = 1e-6);
        assert_relative_eq!(r.poa.unwrap(), 4.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn latency_of_known_flows() {
        let f = fixtures::pigou();
        assert_eq!(total_latency(&f.network, &f.cf, &[0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(total_latency(&f.network, &f.cf, &[0.0, 1.0]).unwrap(), 1.0, epsilon = 1e-8);
        assert_relative_eq!(total_latency(&f.network, &f.cf, &[0.5, 0.5]).unwrap(), 0.75, epsilon = 1e-8);
    }

    #[test]
    fn constant_latency_partials() {
        let f = fixtures::line(2, 5.0);
        let s = sensitivity_at(&f.network, &CongestionFactor::constant(), &[5.0, 0.0]).unwrap();
        assert_eq!(s[0].d_free_flow_time, 5.0);
        assert_eq!(s[0].d_capacity, 0.0);
        assert_eq!(s[1].d_free_flow_time, 0.0);
        assert_eq!(s[1].d_capacity, 0.0);
    }

    #[test]
    fn zero_demand_poa_is_undefined() {
        let f = fixtures::pigou();
        let r = price_of_anarchy(&f.network, &DemandVector::zeros(1), &f.cf, None, 1e-8).unwrap();
        assert!(r.poa.is_none());
    }
}
