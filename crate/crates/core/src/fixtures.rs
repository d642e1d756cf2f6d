//! Reference instances: the Sioux-Falls benchmark, classic two-link and
//! Braess examples, and an 8-node interstate-style network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::latency::CongestionFactor;
use crate::network::{parse_network, DemandVector, FlowState, Link, Network, OdPair};
use crate::paths::RouteSet;

const SIOUX_FALLS_NET: &str = include_str!("../data/SiouxFalls_net.tntp");
const SIOUX_FALLS_TRIPS: &str = include_str!("../data/SiouxFalls_trips.tntp");

/// A network with its demand and congestion factor.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub network: Network,
    pub demand: DemandVector,
    pub cf: CongestionFactor,
}

/// Free-flow time and capacity giving `t(x) = x + TINY` under `f(u) = 1 + u`.
const TINY: f64 = 1e-13;
/// Capacity that makes a link's time constant for practical flows.
const HUGE: f64 = 1e13;

fn link(tail: usize, head: usize, free_flow_time: f64, capacity: f64) -> Link {
    Link {
        tail,
        head,
        free_flow_time,
        capacity,
    }
}

/// Sioux-Falls: 24 nodes, 76 links, 528 OD pairs, `f(u) = 1 + 0.15 u^4`.
pub fn sioux_falls() -> Fixture {
    let (network, demand) = parse_network(SIOUX_FALLS_NET, SIOUX_FALLS_TRIPS).expect("embedded benchmark parses");
    Fixture {
        network,
        demand,
        cf: CongestionFactor::bpr(0.15, 4),
    }
}

/// Two parallel links with `t_1 = 1` and `t_2(x) = x`, one unit of demand.
pub fn pigou() -> Fixture {
    let network = Network::new(
        vec![1, 2],
        vec![link(0, 1, 1.0, HUGE), link(0, 1, TINY, TINY)],
        vec![OdPair { origin: 0, destination: 1 }],
    )
    .expect("valid");
    Fixture {
        network,
        demand: DemandVector::new(vec![1.0]).expect("valid"),
        cf: CongestionFactor::linear(1.0),
    }
}

/// Four-node Braess network with 4000 vehicles: `s->a` and `b->t` cost
/// `x/100`, `a->t` and `s->b` cost 45. The shortcut `a->b` is free.
pub fn braess(shortcut: bool) -> Fixture {
    let var = |t, h| link(t, h, TINY, 100.0 * TINY);
    let constant = |t, h| link(t, h, 45.0, HUGE);
    let mut links = vec![var(0, 1), constant(1, 3), constant(0, 2), var(2, 3)];
    if shortcut {
        links.push(link(1, 2, TINY, HUGE));
    }
    let network = Network::new(vec![1, 2, 3, 4], links, vec![OdPair { origin: 0, destination: 3 }]).expect("valid");
    Fixture {
        network,
        demand: DemandVector::new(vec![4000.0]).expect("valid"),
        cf: CongestionFactor::linear(1.0),
    }
}

/// A chain of `links` links carrying `demand` from the first to the last node.
pub fn line(links: usize, demand: f64) -> Fixture {
    let network = Network::new(
        (1..=links as u64 + 1).collect(),
        (0..links).map(|a| link(a, a + 1, 1.0 + a as f64, 100.0)).collect(),
        vec![OdPair { origin: 0, destination: links }],
    )
    .expect("valid");
    Fixture {
        network,
        demand: DemandVector::new(vec![demand]).expect("valid"),
        cf: CongestionFactor::bpr(0.15, 4),
    }
}

/// Eight interchanges on a ring with four cross-corridors; every link is
/// two-way, giving 24 links and all 56 ordered node pairs as OD pairs.
/// Demand loads the busiest links to about 1.4 times capacity.
pub fn interstate() -> Fixture {
    let corridors: [(usize, usize, f64, f64); 12] = [
        (0, 1, 12.0, 6000.0),
        (1, 2, 9.0, 5400.0),
        (2, 3, 14.0, 6000.0),
        (3, 4, 8.0, 4800.0),
        (4, 5, 11.0, 6000.0),
        (5, 6, 10.0, 5400.0),
        (6, 7, 13.0, 4800.0),
        (7, 0, 9.5, 6000.0),
        (0, 4, 21.0, 7200.0),
        (1, 5, 19.0, 4800.0),
        (2, 6, 20.0, 5400.0),
        (3, 7, 18.0, 4800.0),
    ];
    let mut links = Vec::with_capacity(24);
    for &(u, v, t, m) in &corridors {
        links.push(link(u, v, t, m));
        links.push(link(v, u, t, m));
    }
    let nodes: Vec<u64> = (1..=8).collect();
    let base = Network::new(nodes, links, Vec::new()).expect("valid");
    let pairs = base.all_node_pairs();
    let demand = pairs
        .iter()
        .map(|od| 750.0 + 250.0 * ((3 * od.origin + 5 * od.destination) % 7) as f64)
        .collect();
    Fixture {
        network: base.with_od_pairs(pairs).expect("valid"),
        demand: DemandVector::new(demand).expect("valid"),
        cf: CongestionFactor::bpr(0.15, 4),
    }
}

/// Route-flow generator with known demand and route choice.
#[derive(Clone, Debug)]
pub struct PlantedDemand {
    pub network: Network,
    /// Three shortest routes per OD pair at free-flow times; every simple
    /// route of the network.
    pub routes: RouteSet,
    pub demand: DemandVector,
    pub choice: Vec<Vec<f64>>,
    /// `P' g`, stacked like `routes`.
    pub route_flows: Vec<f64>,
    /// Standard deviation of the per-link count noise.
    pub sigma: f64,
    pub observations: Vec<FlowState>,
}

/// Three origins feed a hub through private parallel links, share one
/// trunk link and leave through two exits; one origin also has a bypass.
/// Ten links and seven routes, so each route has a private link and the
/// link-route incidence has full column rank. Observations are
/// `A xi + N(0, sigma^2)` per link.
pub fn planted_demand(observations: usize, sigma: f64, seed: u64) -> PlantedDemand {
    let links = vec![
        link(0, 3, 4.0, 1000.0),
        link(0, 3, 5.0, 1000.0),
        link(1, 3, 3.0, 1000.0),
        link(1, 3, 4.5, 1000.0),
        link(2, 3, 6.0, 1000.0),
        link(2, 3, 5.0, 1000.0),
        link(2, 4, 12.0, 1000.0),
        link(3, 4, 5.0, 3000.0),
        link(4, 5, 2.0, 2000.0),
        link(4, 6, 3.0, 2000.0),
    ];
    let ods = vec![
        OdPair { origin: 0, destination: 5 },
        OdPair { origin: 1, destination: 6 },
        OdPair { origin: 2, destination: 5 },
    ];
    let network = Network::new((1..=7).collect(), links, ods).expect("valid");
    let routes = RouteSet::k_shortest(&network, 3, &network.free_flow_times()).expect("routes exist");
    let demand = vec![600.0, 450.0, 800.0];
    let shares: [&[f64]; 3] = [&[0.7, 0.3], &[0.55, 0.45], &[0.5, 0.3, 0.2]];
    let choice: Vec<Vec<f64>> = shares.iter().map(|s| s.to_vec()).collect();
    let route_flows: Vec<f64> = choice
        .iter()
        .zip(&demand)
        .flat_map(|(p, g)| p.iter().map(move |pr| pr * g))
        .collect();
    let mut mean = vec![0.0; network.link_count()];
    for ((_, r), f) in routes.iter().zip(&route_flows) {
        for &a in r {
            mean[a] += f;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let observations = (0..observations)
        .map(|_| {
            let x = mean.iter().map(|m| (m + noise.sample(&mut rng)).max(0.0)).collect();
            FlowState::from_link_flows(x).expect("nonnegative")
        })
        .collect();
    PlantedDemand {
        network,
        routes,
        demand: DemandVector::new(demand).expect("valid"),
        choice,
        route_flows,
        sigma,
        observations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let sf = sioux_falls();
        assert_eq!(sf.network.node_count(), 24);
        assert_eq!(sf.network.link_count(), 76);
        assert_eq!(sf.network.od_count(), 528);
        assert_eq!(sf.demand.total(), 360600.0);
        let ring = interstate();
        assert_eq!(ring.network.link_count(), 24);
        assert_eq!(ring.network.od_count(), 56);
        ring.network.ensure_strongly_connected().unwrap();
        let g = planted_demand(20, 15.0, 1);
        assert_eq!(g.network.link_count(), 10);
        assert_eq!(g.routes.route_count(), 7);
        assert_eq!(g.routes.routes.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 3]);
        assert_eq!(g.observations.len(), 20);
    }
}
