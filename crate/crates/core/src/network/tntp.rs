//! Reader and writer for the `.tntp` benchmark text format.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::{DemandVector, Link, Network, OdPair};
use crate::error::{Error, Result};

struct RawLink {
    tail: u64,
    head: u64,
    capacity: f64,
    free_flow_time: f64,
}

fn parse_error(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

/// Skips the `<KEY> value` block. Returns the metadata and the index of the
/// first body line.
fn split_metadata<'a>(lines: &[&'a str]) -> (HashMap<String, &'a str>, usize) {
    let mut meta = HashMap::new();
    for (i, line) in lines.iter().enumerate() {
        let t = line.trim();
        if t.eq_ignore_ascii_case("<END OF METADATA>") {
            return (meta, i + 1);
        }
        if let Some(rest) = t.strip_prefix('<') {
            if let Some((key, value)) = rest.split_once('>') {
                meta.insert(key.trim().to_ascii_uppercase(), value.trim());
            }
        }
    }
    (meta, 0)
}

fn strip_comment(line: &str) -> &str {
    match line.find('~') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_links(text: &str, path: &str) -> Result<Vec<RawLink>> {
    let lines: Vec<&str> = text.lines().collect();
    let (meta, start) = split_metadata(&lines);
    let mut links = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(start) {
        let body = strip_comment(line).trim().trim_end_matches(';').trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(parse_error(
                path,
                i + 1,
                format!("expected at least 5 link fields, found {}", fields.len()),
            ));
        }
        let node = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| parse_error(path, i + 1, format!("invalid node id `{s}`")))
        };
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_error(path, i + 1, format!("invalid {what} `{s}`")))
        };
        links.push(RawLink {
            tail: node(fields[0])?,
            head: node(fields[1])?,
            capacity: num(fields[2], "capacity")?,
            free_flow_time: num(fields[4], "free-flow time")?,
        });
    }
    if let Some(n) = meta.get("NUMBER OF LINKS").and_then(|v| v.parse::<usize>().ok()) {
        if n != links.len() {
            return Err(parse_error(
                path,
                lines.len(),
                format!("metadata announces {n} links, found {}", links.len()),
            ));
        }
    }
    Ok(links)
}

/// `(origin id, destination id, trips)` triples in file order.
fn parse_trip_entries(text: &str, path: &str) -> Result<Vec<(u64, u64, f64)>> {
    let lines: Vec<&str> = text.lines().collect();
    let (_, start) = split_metadata(&lines);
    let mut origin: Option<u64> = None;
    let mut entries = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(start) {
        let body = strip_comment(line).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix("Origin") {
            let id = rest.trim();
            origin = Some(
                id.parse()
                    .map_err(|_| parse_error(path, i + 1, format!("invalid origin `{id}`")))?,
            );
            continue;
        }
        let o = origin.ok_or_else(|| parse_error(path, i + 1, "trip entry before any `Origin` line"))?;
        for entry in body.split(';').map(str::trim).filter(|e| !e.is_empty()) {
            let (d, v) = entry
                .split_once(':')
                .ok_or_else(|| parse_error(path, i + 1, format!("malformed entry `{entry}`")))?;
            let d: u64 = d
                .trim()
                .parse()
                .map_err(|_| parse_error(path, i + 1, format!("invalid destination `{}`", d.trim())))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| parse_error(path, i + 1, format!("invalid trip count `{}`", v.trim())))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(parse_error(path, i + 1, format!("negative trip count {v}")));
            }
            entries.push((o, d, v));
        }
    }
    Ok(entries)
}

fn build(net_text: &str, net_path: &str, trips_text: &str, trips_path: &str) -> Result<(Network, DemandVector)> {
    let raw = parse_links(net_text, net_path)?;
    let ids: BTreeSet<u64> = raw.iter().flat_map(|l| [l.tail, l.head]).collect();
    let node_ids: Vec<u64> = ids.into_iter().collect();
    let index: HashMap<u64, usize> = node_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let links = raw
        .iter()
        .map(|l| Link {
            tail: index[&l.tail],
            head: index[&l.head],
            free_flow_time: l.free_flow_time,
            capacity: l.capacity,
        })
        .collect();

    let mut od_pairs = Vec::new();
    let mut demand = Vec::new();
    for (o, d, v) in parse_trip_entries(trips_text, trips_path)? {
        if v == 0.0 || o == d {
            continue;
        }
        let (Some(&oi), Some(&di)) = (index.get(&o), index.get(&d)) else {
            return Err(parse_error(
                trips_path,
                0,
                format!("OD pair ({o}, {d}) refers to a node absent from the network"),
            ));
        };
        od_pairs.push(OdPair {
            origin: oi,
            destination: di,
        });
        demand.push(v);
    }
    let network = Network::new(node_ids, links, od_pairs)?;
    network.ensure_strongly_connected()?;
    Ok((network, DemandVector::new(demand)?))
}

/// Parses net and trips text. OD pairs are those with positive trips, in
/// file order; nodes are renumbered in increasing id order.
pub fn parse_network(net_text: &str, trips_text: &str) -> Result<(Network, DemandVector)> {
    build(net_text, "<net>", trips_text, "<trips>")
}

pub fn load_network(net_file: &Path, trips_file: &Path) -> Result<(Network, DemandVector)> {
    let net = std::fs::read_to_string(net_file).map_err(|e| Error::io(net_file, e))?;
    let trips = std::fs::read_to_string(trips_file).map_err(|e| Error::io(trips_file, e))?;
    build(
        &net,
        &net_file.display().to_string(),
        &trips,
        &trips_file.display().to_string(),
    )
}

/// Reads a trips file against an existing network. OD pairs absent from the
/// file get zero demand; positive trips for pairs outside the network are an
/// error.
pub fn load_trips(trips_file: &Path, network: &Network) -> Result<DemandVector> {
    let text = std::fs::read_to_string(trips_file).map_err(|e| Error::io(trips_file, e))?;
    let path = trips_file.display().to_string();
    let mut demand = vec![0.0; network.od_count()];
    for (o, d, v) in parse_trip_entries(&text, &path)? {
        if v == 0.0 || o == d {
            continue;
        }
        let w = network
            .node_index(o)
            .zip(network.node_index(d))
            .and_then(|(o, d)| network.od_index(OdPair { origin: o, destination: d }))
            .ok_or_else(|| parse_error(&path, 0, format!("OD pair ({o}, {d}) is not in the network")))?;
        demand[w] = v;
    }
    DemandVector::new(demand)
}

pub fn write_net(network: &Network) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<NUMBER OF ZONES> {}", network.node_count());
    let _ = writeln!(s, "<NUMBER OF NODES> {}", network.node_count());
    let _ = writeln!(s, "<FIRST THRU NODE> 1");
    let _ = writeln!(s, "<NUMBER OF LINKS> {}", network.link_count());
    let _ = writeln!(s, "<END OF METADATA>\n\n");
    let _ = writeln!(
        s,
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;"
    );
    for l in network.links() {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t0.15\t4\t0\t0\t1\t;",
            network.node_id(l.tail),
            network.node_id(l.head),
            l.capacity,
            l.free_flow_time,
            l.free_flow_time
        );
    }
    s
}

pub fn write_trips(network: &Network, demand: &DemandVector) -> Result<String> {
    demand.check_len(network)?;
    let mut s = String::new();
    let _ = writeln!(s, "<NUMBER OF ZONES> {}", network.node_count());
    let _ = writeln!(s, "<TOTAL OD FLOW> {:?}", demand.total());
    let _ = writeln!(s, "<END OF METADATA>\n\n");
    for g in network.origin_groups() {
        let _ = writeln!(s, "Origin \t{}", network.node_id(g.origin));
        for chunk in g.pairs.chunks(5) {
            for &(w, d) in chunk {
                let _ = write!(s, "    {} : {:?};", network.node_id(d), demand.values()[w]);
            }
            s.push('\n');
        }
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NET: &str = "<NUMBER OF NODES> 3\n<NUMBER OF LINKS> 4\n<END OF METADATA>\n\
        ~ init term cap len fft b power ;\n\
        \t10\t20\t100.5\t1\t2.25\t0.15\t4\t;\n\
        \t20\t30\t50\t1\t3\t0.15\t4\t;\n\
        \t30\t10\t50\t1\t1\t0.15\t4\t;\n\
        \t20\t10\t80\t1\t2\t0.15\t4\t;\n";

    const TRIPS: &str = "<NUMBER OF ZONES> 3\n<END OF METADATA>\n\n\
        Origin 10\n  10 : 0.0;  20 : 5.0;  30 : 0.0;\n\
        Origin 30\n  20 : 1.5;\n";

    #[test]
    fn parses_links_and_drops_zero_trips() {
        let (net, d) = parse_network(NET, TRIPS).unwrap();
        assert_eq!(net.node_ids(), &[10, 20, 30]);
        assert_eq!(net.link_count(), 4);
        assert_eq!(net.links()[0].free_flow_time, 2.25);
        assert_eq!(net.links()[0].capacity, 100.5);
        assert_eq!(net.od_count(), 2);
        assert_eq!(d.values(), &[5.0, 1.5]);
    }

    #[test]
    fn reports_line_of_bad_field() {
        let bad = NET.replace("100.5", "abc");
        match parse_network(&bad, TRIPS) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_values() {
        let (net, d) = parse_network(NET, TRIPS).unwrap();
        let (net2, d2) = parse_network(&write_net(&net), &write_trips(&net, &d).unwrap()).unwrap();
        assert_eq!(net.links(), net2.links());
        assert_eq!(net.od_pairs(), net2.od_pairs());
        assert_eq!(d, d2);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let net = "<END OF METADATA>\n 1 2 1 1 1 ;\n 2 3 1 1 1 ;\n 3 2 1 1 1 ;\n";
        let trips = "<END OF METADATA>\nOrigin 1\n 2 : 1;\n";
        assert!(matches!(
            parse_network(net, trips),
            Err(Error::Disconnected { from: 2, to: 1 })
        ));
    }
}
