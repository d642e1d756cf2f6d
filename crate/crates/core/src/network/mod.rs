//! Road network data model: directed links with free-flow times and
//! capacities, origin-destination pairs, demands and link flows.

mod flows;
mod tntp;

pub use flows::{load_flows, parse_flows, write_flows};
pub use tntp::{load_network, load_trips, parse_network, write_net, write_trips};

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed link between two dense node indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub tail: usize,
    pub head: usize,
    /// Free-flow travel time (minutes).
    pub free_flow_time: f64,
    /// Flow capacity (vehicles/hour).
    pub capacity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
}

/// Immutable road network. Node ids from input files are renumbered to the
/// dense range `0..node_count()`; [`Network::node_id`] maps back.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "NetworkData", into = "NetworkData")]
pub struct Network {
    node_ids: Vec<u64>,
    links: Vec<Link>,
    od_pairs: Vec<OdPair>,
    out_links: Vec<Vec<usize>>,
    origins: Vec<OriginGroup>,
}

/// OD pairs sharing an origin, in OD-index order.
#[derive(Clone, Debug)]
pub(crate) struct OriginGroup {
    pub origin: usize,
    /// `(od index, destination)`
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct NetworkData {
    node_ids: Vec<u64>,
    links: Vec<Link>,
    od_pairs: Vec<OdPair>,
}

impl TryFrom<NetworkData> for Network {
    type Error = Error;
    fn try_from(d: NetworkData) -> Result<Self> {
        Network::new(d.node_ids, d.links, d.od_pairs)
    }
}

impl From<Network> for NetworkData {
    fn from(n: Network) -> Self {
        NetworkData {
            node_ids: n.node_ids,
            links: n.links,
            od_pairs: n.od_pairs,
        }
    }
}

impl Network {
    /// Validates and builds a network. Every OD destination must be reachable
    /// from its origin; full strong connectivity is checked separately by
    /// [`Network::ensure_strongly_connected`].
    pub fn new(node_ids: Vec<u64>, links: Vec<Link>, od_pairs: Vec<OdPair>) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("network has no nodes".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &node_ids {
            if !seen.insert(*id) {
                return Err(Error::InvalidNetwork(format!("duplicate node id {id}")));
            }
        }
        for (a, link) in links.iter().enumerate() {
            if link.tail >= n || link.head >= n {
                return Err(Error::InvalidNetwork(format!(
                    "link {} references a node outside 0..{n}",
                    a + 1
                )));
            }
            if !(link.free_flow_time > 0.0) || !link.free_flow_time.is_finite() {
                return Err(Error::NonPositiveParameter {
                    link: a + 1,
                    parameter: "free-flow time",
                    value: link.free_flow_time,
                });
            }
            if !(link.capacity > 0.0) || !link.capacity.is_finite() {
                return Err(Error::NonPositiveParameter {
                    link: a + 1,
                    parameter: "capacity",
                    value: link.capacity,
                });
            }
            if link.tail == link.head {
                return Err(Error::InvalidNetwork(format!(
                    "link {} is a self-loop at node {}",
                    a + 1,
                    node_ids[link.tail]
                )));
            }
        }
        let mut seen_od = HashSet::with_capacity(od_pairs.len());
        for od in &od_pairs {
            if od.origin >= n || od.destination >= n {
                return Err(Error::InvalidNetwork(
                    "OD pair references a node outside the network".into(),
                ));
            }
            if od.origin == od.destination {
                return Err(Error::InvalidNetwork(format!(
                    "OD pair with origin equal to destination ({})",
                    node_ids[od.origin]
                )));
            }
            if !seen_od.insert(*od) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate OD pair ({}, {})",
                    node_ids[od.origin], node_ids[od.destination]
                )));
            }
        }

        let mut out_links = vec![Vec::new(); n];
        for (a, link) in links.iter().enumerate() {
            out_links[link.tail].push(a);
        }
        for list in &mut out_links {
            list.sort_by_key(|&a| (links[a].head, a));
        }

        let mut origins: Vec<OriginGroup> = Vec::new();
        let mut order: Vec<usize> = (0..od_pairs.len()).collect();
        order.sort_by_key(|&w| (od_pairs[w].origin, w));
        for w in order {
            let od = od_pairs[w];
            match origins.last_mut() {
                Some(g) if g.origin == od.origin => g.pairs.push((w, od.destination)),
                _ => origins.push(OriginGroup {
                    origin: od.origin,
                    pairs: vec![(w, od.destination)],
                }),
            }
        }

        let net = Self {
            node_ids,
            links,
            od_pairs,
            out_links,
            origins,
        };
        for g in &net.origins {
            let reach = net.reachable_from(g.origin, false);
            if let Some(&(_, d)) = g.pairs.iter().find(|(_, d)| !reach[*d]) {
                return Err(Error::Unreachable {
                    origin: net.node_ids[g.origin],
                    destination: net.node_ids[d],
                });
            }
        }
        Ok(net)
    }

    /// Same nodes and links with a different OD pair list.
    pub fn with_od_pairs(&self, od_pairs: Vec<OdPair>) -> Result<Self> {
        Network::new(self.node_ids.clone(), self.links.clone(), od_pairs)
    }

    /// Same topology with link parameters rewritten by `f(index, link)`.
    pub fn map_links(&self, mut f: impl FnMut(usize, &mut Link)) -> Result<Self> {
        let mut links = self.links.clone();
        for (a, link) in links.iter_mut().enumerate() {
            f(a, link);
        }
        Network::new(self.node_ids.clone(), links, self.od_pairs.clone())
    }

    /// Every ordered pair of distinct nodes, origin-major.
    pub fn all_node_pairs(&self) -> Vec<OdPair> {
        let n = self.node_count();
        (0..n)
            .flat_map(|o| {
                (0..n).filter(move |&d| d != o).map(move |d| OdPair {
                    origin: o,
                    destination: d,
                })
            })
            .collect()
    }

    pub fn ensure_strongly_connected(&self) -> Result<()> {
        let forward = self.reachable_from(0, false);
        if let Some(v) = forward.iter().position(|r| !r) {
            return Err(Error::Disconnected {
                from: self.node_ids[0],
                to: self.node_ids[v],
            });
        }
        let backward = self.reachable_from(0, true);
        if let Some(v) = backward.iter().position(|r| !r) {
            return Err(Error::Disconnected {
                from: self.node_ids[v],
                to: self.node_ids[0],
            });
        }
        Ok(())
    }

    fn reachable_from(&self, start: usize, reverse: bool) -> Vec<bool> {
        let n = self.node_count();
        let mut adj = vec![Vec::new(); n];
        for l in &self.links {
            if reverse {
                adj[l.head].push(l.tail);
            } else {
                adj[l.tail].push(l.head);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn od_count(&self) -> usize {
        self.od_pairs.len()
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.node_ids
    }

    pub fn node_id(&self, index: usize) -> u64 {
        self.node_ids[index]
    }

    pub fn node_index(&self, id: u64) -> Option<usize> {
        self.node_ids.iter().position(|&x| x == id)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn od_index(&self, od: OdPair) -> Option<usize> {
        self.od_pairs.iter().position(|&w| w == od)
    }

    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    pub(crate) fn origin_groups(&self) -> &[OriginGroup] {
        &self.origins
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.free_flow_time).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }

    /// Node-link incidence matrix: the column of link `(u, v)` holds `-1` at
    /// `u` and `+1` at `v`, so that `N x^w = d^w` with `d^w` carrying `-d` at the
    /// origin and `+d` at the destination.
    pub fn incidence(&self) -> DMatrix<i8> {
        let mut n = DMatrix::zeros(self.node_count(), self.link_count());
        for (a, l) in self.links.iter().enumerate() {
            n[(l.tail, a)] = -1;
            n[(l.head, a)] = 1;
        }
        n
    }

    /// `d^w` for OD pair `w` carrying `demand`.
    pub fn node_demand(&self, w: usize, demand: f64) -> Vec<f64> {
        let mut d = vec![0.0; self.node_count()];
        let od = self.od_pairs[w];
        d[od.origin] = -demand;
        d[od.destination] = demand;
        d
    }
}

/// Nonnegative demand per OD pair, indexed like [`Network::od_pairs`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DemandVector(Vec<f64>);

impl TryFrom<Vec<f64>> for DemandVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        DemandVector::new(v)
    }
}

impl From<DemandVector> for Vec<f64> {
    fn from(d: DemandVector) -> Self {
        d.0
    }
}

impl DemandVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "demand must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }

    pub(crate) fn check_len(&self, network: &Network) -> Result<()> {
        if self.len() != network.od_count() {
            return Err(Error::Dimension(format!(
                "demand vector has {} entries but the network has {} OD pairs",
                self.len(),
                network.od_count()
            )));
        }
        Ok(())
    }
}

/// Flow carried by one route of an OD pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteFlow {
    /// Link indices in travel order.
    pub links: Vec<usize>,
    pub flow: f64,
}

/// Link flows with an optional per-OD route decomposition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub link_flows: Vec<f64>,
    /// Routes and their flows, indexed by OD pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Vec<Vec<RouteFlow>>>,
}

/// Residuals of the feasible-set conditions `x = sum_w x^w`, `N x^w = d^w`.
#[derive(Clone, Debug, Serialize)]
pub struct FeasibilityReport {
    pub max_conservation_residual: f64,
    pub max_aggregation_residual: f64,
    pub min_flow: f64,
    pub feasible: bool,
}

impl FlowState {
    pub fn from_link_flows(link_flows: Vec<f64>) -> Result<Self> {
        if let Some((a, v)) = link_flows
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::NegativeFlow {
                link: a + 1,
                observation: 1,
                value: *v,
            });
        }
        Ok(Self {
            link_flows,
            decomposition: None,
        })
    }

    pub fn zeros(links: usize) -> Self {
        Self {
            link_flows: vec![0.0; links],
            decomposition: None,
        }
    }

    pub fn norm(&self) -> f64 {
        self.link_flows.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Link flows `x^w` attributed to OD pair `w`.
    pub fn od_link_flows(&self, w: usize) -> Option<Vec<f64>> {
        let routes = self.decomposition.as_ref()?.get(w)?;
        let mut x = vec![0.0; self.link_flows.len()];
        for r in routes {
            for &a in &r.links {
                x[a] += r.flow;
            }
        }
        Some(x)
    }

    /// Checks membership in the feasible set with tolerance
    /// `1e-6 (1 + |d^w|)` per OD pair.
    pub fn check_feasible(&self, network: &Network, demand: &DemandVector) -> Result<FeasibilityReport> {
        demand.check_len(network)?;
        if self.link_flows.len() != network.link_count() {
            return Err(Error::Dimension(format!(
                "flow has {} links, network {}",
                self.link_flows.len(),
                network.link_count()
            )));
        }
        let routes = self.decomposition.as_ref().ok_or(Error::MissingDecomposition)?;
        if routes.len() != network.od_count() {
            return Err(Error::Dimension(
                "decomposition does not cover every OD pair".into(),
            ));
        }
        let mut feasible = true;
        let mut max_cons = 0.0f64;
        let mut total = vec![0.0; network.link_count()];
        let mut worst_agg_tol = f64::INFINITY;
        for (w, &d) in demand.values().iter().enumerate() {
            let xw = self.od_link_flows(w).expect("decomposition present");
            let mut balance = vec![0.0; network.node_count()];
            for (a, l) in network.links().iter().enumerate() {
                balance[l.tail] -= xw[a];
                balance[l.head] += xw[a];
                total[a] += xw[a];
            }
            let target = network.node_demand(w, d);
            let tol = 1e-6 * (1.0 + d.abs() * std::f64::consts::SQRT_2);
            worst_agg_tol = worst_agg_tol.min(tol);
            let res = balance
                .iter()
                .zip(&target)
                .map(|(b, t)| (b - t).abs())
                .fold(0.0, f64::max);
            if res > tol || xw.iter().any(|v| *v < -tol) {
                feasible = false;
            }
            max_cons = max_cons.max(res);
        }
        let max_agg = total
            .iter()
            .zip(&self.link_flows)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let agg_tol = if worst_agg_tol.is_finite() { worst_agg_tol } else { 1e-6 };
        if max_agg > agg_tol {
            feasible = false;
        }
        let min_flow = self.link_flows.iter().copied().fold(f64::INFINITY, f64::min);
        if min_flow < 0.0 {
            feasible = false;
        }
        Ok(FeasibilityReport {
            max_conservation_residual: max_cons,
            max_aggregation_residual: max_agg,
            min_flow,
            feasible,
        })
    }
}
