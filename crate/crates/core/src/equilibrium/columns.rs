//! All-or-nothing extreme points kept as weighted columns, so the current
//! flow is a convex combination with a known route decomposition.

use std::collections::HashMap;

use crate::network::{Network, RouteFlow};
use crate::paths::SearchSpace;

pub(crate) struct Loader {
    space: SearchSpace,
    route: Vec<usize>,
}

impl Loader {
    pub fn new(network: &Network) -> Self {
        Self {
            space: SearchSpace::new(network.node_count()),
            route: Vec::new(),
        }
    }

    /// All-or-nothing flows into `out`. When `pools` is given, also returns
    /// the route id used by every OD pair.
    pub fn load(
        &mut self,
        network: &Network,
        demand: &[f64],
        costs: &[f64],
        out: &mut [f64],
        mut pools: Option<&mut RoutePools>,
    ) -> Vec<u32> {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut ids = if pools.is_some() {
            vec![u32::MAX; network.od_count()]
        } else {
            Vec::new()
        };
        for g in network.origin_groups() {
            if g.pairs.iter().all(|&(w, _)| demand[w] == 0.0) {
                continue;
            }
            self.space.search(network, costs, g.origin, None, None, None);
            self.space.load_tree(network, &g.pairs, demand, out);
            if let Some(pools) = pools.as_deref_mut() {
                for &(w, d) in &g.pairs {
                    if demand[w] == 0.0 {
                        continue;
                    }
                    self.route.clear();
                    let mut v = d;
                    while let Some(a) = self.space.pred_link(v) {
                        self.route.push(a);
                        v = network.links()[a].tail;
                    }
                    self.route.reverse();
                    ids[w] = pools.intern(w, &self.route);
                }
            }
        }
        ids
    }
}

/// Distinct routes seen per OD pair.
#[derive(Clone, Debug, Default)]
pub(crate) struct RoutePools {
    pub routes: Vec<Vec<Vec<usize>>>,
}

impl RoutePools {
    pub fn new(od_count: usize) -> Self {
        Self {
            routes: vec![Vec::new(); od_count],
        }
    }

    fn intern(&mut self, w: usize, route: &[usize]) -> u32 {
        let pool = &mut self.routes[w];
        match pool.iter().position(|r| r == route) {
            Some(i) => i as u32,
            None => {
                pool.push(route.to_vec());
                (pool.len() - 1) as u32
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Column {
    pub flows: Vec<f64>,
    pub routes: Vec<u32>,
    pub weight: f64,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct ColumnSet {
    pub pools: RoutePools,
    pub columns: Vec<Column>,
    index: HashMap<Vec<u32>, usize>,
}

impl ColumnSet {
    pub fn new(od_count: usize) -> Self {
        Self {
            pools: RoutePools::new(od_count),
            columns: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Scales existing weights by `1 - step` and adds `step` to the column
    /// with the given routes.
    pub fn blend(&mut self, flows: &[f64], routes: Vec<u32>, step: f64) {
        for c in &mut self.columns {
            c.weight *= 1.0 - step;
        }
        let j = self.find_or_insert(flows, routes);
        self.columns[j].weight += step;
    }

    pub fn find_or_insert(&mut self, flows: &[f64], routes: Vec<u32>) -> usize {
        if let Some(&j) = self.index.get(&routes) {
            return j;
        }
        self.columns.push(Column {
            flows: flows.to_vec(),
            routes: routes.clone(),
            weight: 0.0,
        });
        self.index.insert(routes, self.columns.len() - 1);
        self.columns.len() - 1
    }

    /// Removes columns whose weight is not positive and renormalizes.
    pub fn prune(&mut self) {
        let before = self.columns.len();
        self.columns.retain(|c| c.weight > 0.0);
        if self.columns.len() != before {
            self.index = self
                .columns
                .iter()
                .enumerate()
                .map(|(j, c)| (c.routes.clone(), j))
                .collect();
        }
        let total: f64 = self.columns.iter().map(|c| c.weight).sum();
        if total > 0.0 {
            for c in &mut self.columns {
                c.weight /= total;
            }
        }
    }

    pub fn link_flows(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for c in &self.columns {
            for (o, f) in out.iter_mut().zip(&c.flows) {
                *o += c.weight * f;
            }
        }
    }

    pub fn decomposition(&self, demand: &[f64]) -> Vec<Vec<RouteFlow>> {
        let mut out = Vec::with_capacity(demand.len());
        for (w, &d) in demand.iter().enumerate() {
            let mut by_route: Vec<f64> = vec![0.0; self.pools.routes[w].len()];
            if d > 0.0 {
                for c in &self.columns {
                    by_route[c.routes[w] as usize] += c.weight * d;
                }
            }
            out.push(
                by_route
                    .into_iter()
                    .enumerate()
                    .filter(|(_, f)| *f > 0.0)
                    .map(|(r, flow)| RouteFlow {
                        links: self.pools.routes[w][r].clone(),
                        flow,
                    })
                    .collect(),
            );
        }
        out
    }
}
