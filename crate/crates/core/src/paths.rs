//! Shortest routes, all-or-nothing loading and k-shortest simple routes.
//!
//! Among routes of equal cost the one with the lexicographically smallest
//! node sequence wins, then the smallest link sequence. This makes every
//! result deterministic.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{DemandVector, FlowState, Network, OdPair, RouteFlow};

/// A simple route with its cost under the costs it was computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub links: Vec<usize>,
    pub cost: f64,
}

impl Route {
    pub fn nodes(&self, network: &Network) -> Vec<usize> {
        let mut nodes = Vec::with_capacity(self.links.len() + 1);
        if let Some(&first) = self.links.first() {
            nodes.push(network.links()[first].tail);
        }
        nodes.extend(self.links.iter().map(|&a| network.links()[a].head));
        nodes
    }
}

pub(crate) fn check_costs(network: &Network, costs: &[f64]) -> Result<()> {
    if costs.len() != network.link_count() {
        return Err(Error::Dimension(format!(
            "{} link costs for {} links",
            costs.len(),
            network.link_count()
        )));
    }
    if let Some((a, c)) = costs
        .iter()
        .enumerate()
        .find(|(_, c)| !(**c > 0.0) || !c.is_finite())
    {
        return Err(Error::NonPositiveParameter {
            link: a + 1,
            parameter: "cost",
            value: *c,
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

const NONE: usize = usize::MAX;

/// Reusable buffers for label-setting searches.
#[derive(Clone, Debug, Default)]
pub(crate) struct SearchSpace {
    pub dist: Vec<f64>,
    pub pred: Vec<usize>,
    /// Nodes in settle order.
    pub order: Vec<usize>,
    settled: Vec<bool>,
    heap: BinaryHeap<Reverse<Key>>,
    node_flow: Vec<f64>,
    scratch_a: Vec<usize>,
    scratch_b: Vec<usize>,
}

impl SearchSpace {
    pub fn new(nodes: usize) -> Self {
        Self {
            dist: vec![f64::INFINITY; nodes],
            pred: vec![NONE; nodes],
            order: Vec::with_capacity(nodes),
            settled: vec![false; nodes],
            heap: BinaryHeap::new(),
            node_flow: vec![0.0; nodes],
            scratch_a: Vec::new(),
            scratch_b: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        self.pred.iter_mut().for_each(|p| *p = NONE);
        self.settled.iter_mut().for_each(|s| *s = false);
        self.order.clear();
        self.heap.clear();
    }

    /// Node sequence of the tree path to `v`, reversed.
    fn trace_nodes(pred: &[usize], network: &Network, mut v: usize, out: &mut Vec<usize>) {
        out.clear();
        out.push(v);
        while pred[v] != NONE {
            v = network.links()[pred[v]].tail;
            out.push(v);
        }
    }

    fn trace_links(pred: &[usize], network: &Network, mut v: usize, out: &mut Vec<usize>) {
        out.clear();
        while pred[v] != NONE {
            out.push(pred[v]);
            v = network.links()[pred[v]].tail;
        }
    }

    /// True when reaching `v` via link `a` beats the current predecessor
    /// under the tie rule.
    fn prefer(&mut self, network: &Network, a: usize, v: usize) -> bool {
        let old = self.pred[v];
        let u_new = network.links()[a].tail;
        let u_old = network.links()[old].tail;
        let (sa, sb) = (&mut self.scratch_a, &mut self.scratch_b);
        if u_new != u_old {
            Self::trace_nodes(&self.pred, network, u_new, sa);
            Self::trace_nodes(&self.pred, network, u_old, sb);
            let (na, nb) = (sa.iter().rev().chain([&v]), sb.iter().rev().chain([&v]));
            match na.cmp(nb) {
                Ordering::Less => return true,
                Ordering::Greater => return false,
                Ordering::Equal => {}
            }
        }
        Self::trace_links(&self.pred, network, u_new, sa);
        Self::trace_links(&self.pred, network, u_old, sb);
        sa.insert(0, a);
        sb.insert(0, old);
        sa.iter().rev().cmp(sb.iter().rev()) == Ordering::Less
    }

    /// Label-setting search from `source`. Stops early once `target` is
    /// settled.
    pub fn search(
        &mut self,
        network: &Network,
        costs: &[f64],
        source: usize,
        banned_nodes: Option<&[bool]>,
        banned_links: Option<&[bool]>,
        target: Option<usize>,
    ) {
        self.reset();
        self.dist[source] = 0.0;
        self.heap.push(Reverse(Key(0.0, source)));
        while let Some(Reverse(Key(d, u))) = self.heap.pop() {
            if self.settled[u] || d > self.dist[u] {
                continue;
            }
            self.settled[u] = true;
            self.order.push(u);
            if Some(u) == target {
                break;
            }
            for &a in network.out_links(u) {
                if banned_links.is_some_and(|b| b[a]) {
                    continue;
                }
                let v = network.links()[a].head;
                if self.settled[v] || banned_nodes.is_some_and(|b| b[v]) {
                    continue;
                }
                let nd = d + costs[a];
                if nd < self.dist[v] {
                    self.dist[v] = nd;
                    self.pred[v] = a;
                    self.heap.push(Reverse(Key(nd, v)));
                } else if nd == self.dist[v] && self.prefer(network, a, v) {
                    self.pred[v] = a;
                }
            }
        }
    }

    pub fn pred_link(&self, v: usize) -> Option<usize> {
        (self.pred[v] != NONE).then_some(self.pred[v])
    }

    /// Links of the tree path to `v`, in travel order.
    pub fn route_to(&self, network: &Network, v: usize) -> Vec<usize> {
        let mut links = Vec::new();
        Self::trace_links(&self.pred, network, v, &mut links);
        links.reverse();
        links
    }

    /// Adds the demand of every pair in the origin group to `flows` along the
    /// current tree.
    pub fn load_tree(&mut self, network: &Network, pairs: &[(usize, usize)], demand: &[f64], flows: &mut [f64]) {
        for &(w, d) in pairs {
            self.node_flow[d] += demand[w];
        }
        for &v in self.order.iter().rev() {
            let f = self.node_flow[v];
            if f != 0.0 {
                self.node_flow[v] = 0.0;
                let a = self.pred[v];
                if a != NONE {
                    flows[a] += f;
                    self.node_flow[network.links()[a].tail] += f;
                }
            }
        }
    }
}

fn unreachable(network: &Network, o: usize, d: usize) -> Error {
    Error::Unreachable {
        origin: network.node_id(o),
        destination: network.node_id(d),
    }
}

/// Minimum-cost route for every OD pair, indexed like `network.od_pairs()`.
pub fn shortest_routes(network: &Network, link_costs: &[f64]) -> Result<Vec<Route>> {
    check_costs(network, link_costs)?;
    let mut space = SearchSpace::new(network.node_count());
    let mut out = vec![None; network.od_count()];
    for g in network.origin_groups() {
        space.search(network, link_costs, g.origin, None, None, None);
        for &(w, d) in &g.pairs {
            if !space.dist[d].is_finite() {
                return Err(unreachable(network, g.origin, d));
            }
            let links = space.route_to(network, d);
            let cost = route_cost(&links, link_costs);
            out[w] = Some(Route { links, cost });
        }
    }
    Ok(out.into_iter().map(|r| r.expect("every OD pair visited")).collect())
}

pub(crate) fn route_cost(links: &[usize], costs: &[f64]) -> f64 {
    links.iter().map(|&a| costs[a]).sum()
}

/// Loads every OD demand onto its shortest route. The result carries the
/// per-OD decomposition.
pub fn all_or_nothing(network: &Network, demand: &DemandVector, link_costs: &[f64]) -> Result<FlowState> {
    demand.check_len(network)?;
    let routes = shortest_routes(network, link_costs)?;
    let mut x = vec![0.0; network.link_count()];
    let mut decomposition = Vec::with_capacity(routes.len());
    for (route, &g) in routes.into_iter().zip(demand.values()) {
        if g > 0.0 {
            for &a in &route.links {
                x[a] += g;
            }
            decomposition.push(vec![RouteFlow {
                links: route.links,
                flow: g,
            }]);
        } else {
            decomposition.push(Vec::new());
        }
    }
    Ok(FlowState {
        link_flows: x,
        decomposition: Some(decomposition),
    })
}

/// Link-flow-only all-or-nothing loading into `out`.
#[cfg(test)]
pub(crate) fn aon_flows(
    network: &Network,
    demand: &[f64],
    costs: &[f64],
    space: &mut SearchSpace,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for g in network.origin_groups() {
        if g.pairs.iter().all(|&(w, _)| demand[w] == 0.0) {
            continue;
        }
        space.search(network, costs, g.origin, None, None, None);
        space.load_tree(network, &g.pairs, demand, out);
    }
}

fn route_order(network: &Network, a: &Route, b: &Route) -> Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then_with(|| a.nodes(network).cmp(&b.nodes(network)))
        .then_with(|| a.links.cmp(&b.links))
}

/// Up to `k` distinct simple routes for `od` in nondecreasing cost order,
/// by deviation from previously found routes.
pub fn k_shortest_simple(network: &Network, od: OdPair, k: usize, link_costs: &[f64]) -> Result<Vec<Route>> {
    check_costs(network, link_costs)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = network.node_count();
    if od.origin >= n || od.destination >= n || od.origin == od.destination {
        return Err(Error::InvalidArgument("invalid OD pair".into()));
    }
    let mut space = SearchSpace::new(n);
    space.search(network, link_costs, od.origin, None, None, Some(od.destination));
    if !space.dist[od.destination].is_finite() {
        return Err(unreachable(network, od.origin, od.destination));
    }
    let first = space.route_to(network, od.destination);
    let mut found = vec![Route {
        cost: route_cost(&first, link_costs),
        links: first,
    }];
    let mut candidates: Vec<Route> = Vec::new();
    let mut banned_nodes = vec![false; n];
    let mut banned_links = vec![false; network.link_count()];

    while found.len() < k {
        let last = found.last().expect("nonempty").clone();
        let nodes = last.nodes(network);
        for j in 0..last.links.len() {
            let spur = nodes[j];
            let root = &last.links[..j];
            banned_links.iter_mut().for_each(|b| *b = false);
            banned_nodes.iter_mut().for_each(|b| *b = false);
            for r in &found {
                if r.links.len() > j && r.links[..j] == *root {
                    banned_links[r.links[j]] = true;
                }
            }
            for &v in &nodes[..j] {
                banned_nodes[v] = true;
            }
            space.search(
                network,
                link_costs,
                spur,
                Some(&banned_nodes),
                Some(&banned_links),
                Some(od.destination),
            );
            if !space.dist[od.destination].is_finite() {
                continue;
            }
            let mut links = root.to_vec();
            links.extend(space.route_to(network, od.destination));
            if found.iter().chain(&candidates).any(|r| r.links == links) {
                continue;
            }
            candidates.push(Route {
                cost: route_cost(&links, link_costs),
                links,
            });
        }
        if candidates.is_empty() {
            break;
        }
        let best = (0..candidates.len())
            .min_by(|&i, &j| route_order(network, &candidates[i], &candidates[j]))
            .expect("nonempty");
        found.push(candidates.swap_remove(best));
    }
    Ok(found)
}

/// Enumerated routes per OD pair with their link-route incidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSet {
    /// Link sequences, indexed by OD pair then route.
    pub routes: Vec<Vec<Vec<usize>>>,
    link_count: usize,
}

impl RouteSet {
    pub fn new(routes: Vec<Vec<Vec<usize>>>, link_count: usize) -> Result<Self> {
        if routes.iter().flatten().flatten().any(|&a| a >= link_count) {
            return Err(Error::Dimension("route references an unknown link".into()));
        }
        Ok(Self { routes, link_count })
    }

    /// `k` shortest simple routes for every OD pair.
    pub fn k_shortest(network: &Network, k: usize, link_costs: &[f64]) -> Result<Self> {
        let routes = network
            .od_pairs()
            .par_iter()
            .map(|&od| {
                k_shortest_simple(network, od, k, link_costs)
                    .map(|rs| rs.into_iter().map(|r| r.links).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            routes,
            link_count: network.link_count(),
        })
    }

    pub fn od_count(&self) -> usize {
        self.routes.len()
    }

    pub fn route_count(&self) -> usize {
        self.routes.iter().map(Vec::len).sum()
    }

    pub fn link_count(&self) -> usize {
        self.link_count
    }

    /// `(od index, link sequence)` in stacked column order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.routes
            .iter()
            .enumerate()
            .flat_map(|(w, rs)| rs.iter().map(move |r| (w, r.as_slice())))
    }

    /// Stacked link-route incidence: entry `(a, r)` is 1 iff route `r` uses
    /// link `a`.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.link_count, self.route_count());
        for (r, (_, links)) in self.iter().enumerate() {
            for &a in links {
                m[(a, r)] = 1.0;
            }
        }
        m
    }

    /// OD index of every stacked route column.
    pub fn route_owner(&self) -> Vec<usize> {
        self.iter().map(|(w, _)| w).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Link;

    fn link(tail: usize, head: usize, t: f64) -> Link {
        Link {
            tail,
            head,
            free_flow_time: t,
            capacity: 1.0,
        }
    }

    fn parallel() -> Network {
        Network::new(
            vec![1, 2],
            vec![link(0, 1, 1.0), link(0, 1, 1.0)],
            vec![OdPair { origin: 0, destination: 1 }],
        )
        .unwrap()
    }

    fn diamond() -> Network {
        Network::new(
            vec![1, 2, 3, 4],
            vec![link(0, 2, 1.0), link(2, 3, 1.0), link(0, 1, 1.0), link(1, 3, 1.0)],
            vec![OdPair { origin: 0, destination: 3 }],
        )
        .unwrap()
    }

    #[test]
    fn parallel_links_pick_cheaper_then_lower_index() {
        let net = parallel();
        assert_eq!(shortest_routes(&net, &[1.0, 2.0]).unwrap()[0].links, vec![0]);
        assert_eq!(shortest_routes(&net, &[2.0, 1.0]).unwrap()[0].links, vec![1]);
        assert_eq!(shortest_routes(&net, &[1.0, 1.0]).unwrap()[0].links, vec![0]);
    }

    #[test]
    fn ties_follow_node_sequence() {
        let net = diamond();
        let r = &shortest_routes(&net, &[1.0; 4]).unwrap()[0];
        assert_eq!(r.nodes(&net), vec![0, 1, 3]);
        assert_eq!(r.links, vec![2, 3]);
    }

    #[test]
    fn diamond_has_exactly_two_routes() {
        let net = diamond();
        let od = net.od_pairs()[0];
        let rs = k_shortest_simple(&net, od, 3, &[1.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0].links, vec![0, 1]);
        assert_eq!(rs[1].cost, 3.0);
        let one = k_shortest_simple(&net, od, 1, &[1.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(one[0], shortest_routes(&net, &[1.0, 1.0, 1.0, 2.0]).unwrap()[0]);
    }

    #[test]
    fn aon_loads_the_unique_route() {
        let net = Network::new(
            vec![1, 2, 3, 4],
            vec![link(0, 1, 1.0), link(1, 2, 1.0), link(2, 3, 1.0), link(3, 0, 1.0)],
            vec![OdPair { origin: 0, destination: 3 }],
        )
        .unwrap();
        let d = DemandVector::new(vec![10.0]).unwrap();
        let x = all_or_nothing(&net, &d, &net.free_flow_times()).unwrap();
        assert_eq!(x.link_flows, vec![10.0, 10.0, 10.0, 0.0]);
        let zero = all_or_nothing(&net, &DemandVector::zeros(1), &net.free_flow_times()).unwrap();
        assert!(zero.link_flows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tree_loading_matches_route_loading() {
        let net = diamond();
        let d = DemandVector::new(vec![3.0]).unwrap();
        let costs = [1.0, 1.0, 1.5, 1.0];
        let full = all_or_nothing(&net, &d, &costs).unwrap();
        let mut space = SearchSpace::new(4);
        let mut x = vec![0.0; 4];
        aon_flows(&net, d.values(), &costs, &mut space, &mut x);
        assert_eq!(x, full.link_flows);
    }

    #[test]
    fn rejects_nonpositive_costs() {
        assert!(shortest_routes(&parallel(), &[0.0, 1.0]).is_err());
        assert!(shortest_routes(&parallel(), &[1.0]).is_err());
    }
}
