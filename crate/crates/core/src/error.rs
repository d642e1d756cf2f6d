use thiserror::Error;

use crate::qp::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("network is not strongly connected: node {to} is unreachable from node {from}")]
    Disconnected { from: u64, to: u64 },

    #[error("link {link} has nonpositive {parameter} ({value})")]
    NonPositiveParameter {
        link: usize,
        parameter: &'static str,
        value: f64,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("unknown link id `{0}`")]
    UnknownLink(String),

    #[error("negative flow {value} on link {link} in observation {observation}")]
    NegativeFlow {
        link: usize,
        observation: usize,
        value: f64,
    },

    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("flow must be nonnegative, got {0}")]
    NegativeArgument(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("node {destination} is unreachable from node {origin}")]
    Unreachable { origin: u64, destination: u64 },

    #[error("flow state carries no per-OD decomposition")]
    MissingDecomposition,

    #[error("route-choice factorization infeasible (max residual {0:e})")]
    Factorization(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Qp(#[from] QpError),

}

impl Error {
    /// True for failures caused by input data rather than by a numerical solver.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Qp(_) | Error::Factorization(_))
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
