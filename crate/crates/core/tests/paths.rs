use proptest::prelude::*;
use wardrop::fixtures;
use wardrop::paths::{all_or_nothing, k_shortest_simple, shortest_routes, RouteSet};
use wardrop::{DemandVector, Link, Network, OdPair};

/// Every simple route from `o` to `d` as `(cost, nodes, links)`.
fn enumerate(net: &Network, costs: &[f64], o: usize, d: usize) -> Vec<(f64, Vec<usize>, Vec<usize>)> {
    fn go(
        net: &Network,
        costs: &[f64],
        d: usize,
        nodes: &mut Vec<usize>,
        links: &mut Vec<usize>,
        out: &mut Vec<(f64, Vec<usize>, Vec<usize>)>,
    ) {
        let v = *nodes.last().unwrap();
        if v == d {
            let c = links.iter().map(|&a| costs[a]).sum();
            out.push((c, nodes.clone(), links.clone()));
            return;
        }
        for (a, l) in net.links().iter().enumerate() {
            if l.tail == v && !nodes.contains(&l.head) {
                nodes.push(l.head);
                links.push(a);
                go(net, costs, d, nodes, links, out);
                nodes.pop();
                links.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(net, costs, d, &mut vec![o], &mut Vec::new(), &mut out);
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
    out
}

fn arb_graph() -> impl Strategy<Value = (Network, Vec<f64>)> {
    (3usize..7)
        .prop_flat_map(|n| {
            let ring = prop::collection::vec(1u8..6, n);
            let extra = prop::collection::vec((0..n, 0..n, 1u8..6), 0..12);
            (Just(n), ring, extra)
        })
        .prop_map(|(n, ring, extra)| {
            let mut links = Vec::new();
            let mut costs = Vec::new();
            for (i, c) in ring.into_iter().enumerate() {
                links.push(Link {
                    tail: i,
                    head: (i + 1) % n,
                    free_flow_time: 1.0,
                    capacity: 1.0,
                });
                costs.push(c as f64);
            }
            for (u, v, c) in extra {
                if u != v {
                    links.push(Link {
                        tail: u,
                        head: v,
                        free_flow_time: 1.0,
                        capacity: 1.0,
                    });
                    costs.push(c as f64);
                }
            }
            let base = Network::new((1..=n as u64).collect(), links, vec![]).unwrap();
            (base.with_od_pairs(base.all_node_pairs()).unwrap(), costs)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shortest_matches_enumeration((net, costs) in arb_graph()) {
        let routes = shortest_routes(&net, &costs).unwrap();
        for (od, r) in net.od_pairs().iter().zip(&routes) {
            let all = enumerate(&net, &costs, od.origin, od.destination);
            let best = &all[0];
            prop_assert_eq!(r.cost, best.0);
            // integer costs make ties exact, so the tie rule is observable
            prop_assert_eq!(&r.nodes(&net), &best.1);
            prop_assert_eq!(&r.links, &best.2);
        }
    }

    #[test]
    fn k_shortest_matches_enumeration((net, costs) in arb_graph(), k in 1usize..6) {
        for od in net.od_pairs() {
            let all = enumerate(&net, &costs, od.origin, od.destination);
            let got = k_shortest_simple(&net, *od, k, &costs).unwrap();
            prop_assert_eq!(got.len(), k.min(all.len()));
            let want: Vec<f64> = all.iter().take(k).map(|r| r.0).collect();
            let have: Vec<f64> = got.iter().map(|r| r.cost).collect();
            prop_assert_eq!(have, want);
            prop_assert_eq!(&got[0].links, &all[0].2);
            for (i, r) in got.iter().enumerate() {
                let nodes = r.nodes(&net);
                let mut sorted = nodes.clone();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), nodes.len(), "route is not simple");
                prop_assert_eq!(nodes[0], od.origin);
                prop_assert_eq!(*nodes.last().unwrap(), od.destination);
                prop_assert!(got[..i].iter().all(|q| q.links != r.links));
            }
        }
    }

    #[test]
    fn aon_total_cost_is_minimal((net, costs) in arb_graph(), scale in 1.0f64..50.0) {
        let demand = DemandVector::new(vec![scale; net.od_count()]).unwrap();
        let x = all_or_nothing(&net, &demand, &costs).unwrap();
        let total: f64 = x.link_flows.iter().zip(&costs).map(|(x, c)| x * c).sum();
        let oracle: f64 = net
            .od_pairs()
            .iter()
            .map(|od| scale * enumerate(&net, &costs, od.origin, od.destination)[0].0)
            .sum();
        prop_assert!((total - oracle).abs() <= 1e-9 * oracle);
    }
}

#[test]
fn interstate_routes_against_enumeration() {
    let f = fixtures::interstate();
    let t0 = f.network.free_flow_times();
    let routes = shortest_routes(&f.network, &t0).unwrap();
    for (od, r) in f.network.od_pairs().iter().zip(&routes) {
        let all = enumerate(&f.network, &t0, od.origin, od.destination);
        assert!((r.cost - all[0].0).abs() < 1e-12);
    }
    let od = OdPair { origin: 0, destination: 4 };
    let all = enumerate(&f.network, &t0, 0, 4);
    let got = k_shortest_simple(&f.network, od, 10, &t0).unwrap();
    for (g, w) in got.iter().zip(&all) {
        assert!((g.cost - w.0).abs() < 1e-9, "{} vs {}", g.cost, w.0);
    }
}

#[test]
fn route_set_incidence() {
    let f = fixtures::interstate();
    let set = RouteSet::k_shortest(&f.network, 3, &f.network.free_flow_times()).unwrap();
    assert_eq!(set.od_count(), 56);
    assert_eq!(set.route_count(), 56 * 3);
    let a = set.incidence();
    assert_eq!(a.nrows(), 24);
    for (r, (w, links)) in set.iter().enumerate() {
        assert_eq!(set.route_owner()[r], w);
        assert_eq!(a.column(r).sum() as usize, links.len());
    }
    assert!(RouteSet::new(vec![vec![vec![30]]], 24).is_err());
}

#[test]
fn rejects_bad_costs() {
    let f = fixtures::line(2, 1.0);
    assert!(shortest_routes(&f.network, &[1.0]).is_err());
    assert!(shortest_routes(&f.network, &[1.0, 0.0]).is_err());
    assert!(k_shortest_simple(&f.network, OdPair { origin: 0, destination: 2 }, 0, &[1.0, 1.0]).is_err());
}
