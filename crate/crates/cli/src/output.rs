//! Artifact writing and the demand CSV format.

use std::path::{Path, PathBuf};

use serde::Serialize;
use wardrop::format::sig17;
use wardrop::{DemandVector, Network, OdPair};

use crate::CliError;

/// Output directory that remembers what was written to it.
pub struct Outputs {
    dir: PathBuf,
    pub written: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        if !self.written.iter().any(|n| n == name) {
            self.written.push(name.into());
        }
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// CSV with a header row; numbers formatted by [`sig17`].
pub struct Table {
    text: String,
}

pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            text: header.join(",") + "\n",
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        let parts: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Int(v) => v.to_string(),
                Cell::Num(v) => sig17(v),
                Cell::Text(v) => v,
            })
            .collect();
        self.text.push_str(&parts.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

macro_rules! row {
    ($($cell:expr),* $(,)?) => { vec![$($crate::output::Cell::from($cell)),*] };
}
pub(crate) use row;

pub fn demand_csv(network: &Network, demand: &DemandVector) -> String {
    let mut t = Table::new(&["origin", "destination", "demand"]);
    for (od, &g) in network.od_pairs().iter().zip(demand.values()) {
        t.row(row![network.node_id(od.origin), network.node_id(od.destination), g]);
    }
    t.finish()
}

/// Reads `origin,destination,demand` rows into the OD order of `network`.
/// Pairs that are absent get zero demand.
pub fn read_demand(path: &Path, network: &Network) -> Result<DemandVector, CliError> {
    let data = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data(e.to_string()))?;
    let mut values = vec![0.0; network.od_count()];
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| data(e.to_string()))?;
        if record.len() != 3 {
            return Err(data(format!("line {line}: expected 3 columns, found {}", record.len())));
        }
        let node = |s: &str| -> Result<usize, CliError> {
            let id: u64 = s.parse().map_err(|_| data(format!("line {line}: bad node id `{s}`")))?;
            network
                .node_index(id)
                .ok_or_else(|| data(format!("line {line}: unknown node {id}")))
        };
        let od = OdPair {
            origin: node(&record[0])?,
            destination: node(&record[1])?,
        };
        let w = network
            .od_index(od)
            .ok_or_else(|| data(format!("line {line}: ({}, {}) is not an OD pair of the trips file", &record[0], &record[1])))?;
        values[w] = record[2]
            .parse()
            .map_err(|_| data(format!("line {line}: bad demand `{}`", &record[2])))?;
    }
    DemandVector::new(values).map_err(|e| data(e.to_string()))
}
