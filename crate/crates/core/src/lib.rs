//! Single-class traffic network analysis: equilibrium assignment, inverse
//! cost estimation, OD demand calibration and price-of-anarchy analytics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod bilev;
pub mod equilibrium;
pub mod error;
pub mod fixtures;
pub mod format;
pub mod gls;
pub mod inverse;
pub mod latency;
pub mod network;
pub mod paths;
pub mod qp;

pub use error::{Error, Result};
pub use latency::CongestionFactor;
pub use network::{DemandVector, FlowState, Link, Network, OdPair, RouteFlow};
