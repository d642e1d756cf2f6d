//! Observed link flows as CSV: `link_id,obs_1,...,obs_K`, one row per link,
//! with 1-based link ids in network order.

use std::io::Read;
use std::path::Path;

use super::{FlowState, Network};
use crate::error::{Error, Result};
use crate::format::sig17;

pub fn load_flows(csv_file: &Path, network: &Network) -> Result<Vec<FlowState>> {
    let file = std::fs::File::open(csv_file).map_err(|e| Error::io(csv_file, e))?;
    parse_flows(file, network).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: csv_file.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

pub fn parse_flows(reader: impl Read, network: &Network) -> Result<Vec<FlowState>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: "<flows>".into(),
        line,
        message,
    };
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let k = header.len().saturating_sub(1);
    if k == 0 {
        return Err(parse_err(1, "header needs link_id and at least one observation column".into()));
    }
    let a_count = network.link_count();
    let mut flows = vec![vec![f64::NAN; a_count]; k];
    let mut seen = vec![false; a_count];
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(Error::ColumnCount {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let id = &record[0];
        let a = id
            .parse::<usize>()
            .ok()
            .filter(|&a| a >= 1 && a <= a_count)
            .ok_or_else(|| Error::UnknownLink(id.to_string()))?
            - 1;
        if seen[a] {
            return Err(parse_err(line, format!("link {id} listed twice")));
        }
        seen[a] = true;
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("invalid flow `{field}`")))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativeFlow {
                    link: a + 1,
                    observation: j + 1,
                    value: v,
                });
            }
            flows[j][a] = v;
        }
    }
    if let Some(a) = seen.iter().position(|s| !s) {
        return Err(Error::InsufficientData(format!("no flow row for link {}", a + 1)));
    }
    flows.into_iter().map(FlowState::from_link_flows).collect()
}

pub fn write_flows(flows: &[FlowState]) -> String {
    let mut s = String::from("link_id");
    for k in 1..=flows.len() {
        s.push_str(&format!(",obs_{k}"));
    }
    s.push('\n');
    let links = flows.first().map_or(0, |f| f.link_flows.len());
    for a in 0..links {
        s.push_str(&(a + 1).to_string());
        for f in flows {
            s.push(',');
            s.push_str(&sig17(f.link_flows[a]));
        }
        s.push('\n');
    }
    s
}
