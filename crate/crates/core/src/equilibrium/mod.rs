//! User-equilibrium and social-optimum assignment.
//!
//! Three solvers share the all-or-nothing subproblem:
//! - MSA averages the all-or-nothing flows with step `1/l` and stops on the
//!   relative change of the flow vector.
//! - Frank-Wolfe moves towards the all-or-nothing flow with an exact line
//!   search and stops on the relative duality gap.
//! - Simplicial Frank-Wolfe additionally re-optimizes the weights of all
//!   extreme points found so far by projected Newton steps, which converges
//!   far faster near the optimum.

mod columns;
mod cost;

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cost::CostKind;
pub(crate) use cost::CostModel;

use crate::error::{Error, Result};
use crate::latency::CongestionFactor;
use crate::network::{DemandVector, FlowState, Network};
use crate::paths::{check_costs, shortest_routes};
use columns::{ColumnSet, Loader};

pub const DEFAULT_MSA_MAX_ITER: usize = 5000;
pub const DEFAULT_FW_MAX_ITER: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Msa,
    /// Frank-Wolfe with exact line search only.
    FwClassic,
    /// Frank-Wolfe step followed by re-optimization over all extreme points.
    Fw,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msa" => Ok(Algorithm::Msa),
            "fw" => Ok(Algorithm::Fw),
            "fw-classic" => Ok(Algorithm::FwClassic),
            _ => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{s}` (expected msa, fw or fw-classic)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssignOptions {
    pub algorithm: Algorithm,
    /// Stopping tolerance: flow-change ratio for MSA, relative gap otherwise.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep per-OD route flows in the returned state.
    pub track_routes: bool,
}

impl AssignOptions {
    pub fn msa(tol: f64) -> Self {
        Self {
            algorithm: Algorithm::Msa,
            tol,
            max_iter: DEFAULT_MSA_MAX_ITER,
            track_routes: true,
        }
    }

    pub fn fw(tol: f64) -> Self {
        Self {
            algorithm: Algorithm::Fw,
            tol,
            max_iter: DEFAULT_FW_MAX_ITER,
            track_routes: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    IterationCap,
    /// No further progress is possible in floating point.
    Stalled,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverReport {
    pub algorithm: Algorithm,
    pub cost: CostKind,
    pub flow: FlowState,
    pub iterations: usize,
    /// Stopping metric per iteration (flow-change ratio for MSA, relative
    /// gap otherwise).
    pub gap_trace: Vec<f64>,
    /// Beckmann potential (or total latency for marginal costs) per iteration.
    pub objective_trace: Vec<f64>,
    pub objective: f64,
    /// Relative duality gap at the returned flow.
    pub relative_gap: f64,
    pub termination: Termination,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub(crate) columns: Option<ColumnSet>,
}

impl SolverReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn hit_iteration_cap(&self) -> bool {
        self.termination == Termination::IterationCap
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Relative gap `(c.x - c.y) / c.x` with `y` the all-or-nothing flow at the
/// costs `c` of `x`.
pub fn relative_gap(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    kind: CostKind,
    x: &[f64],
) -> Result<f64> {
    demand.check_len(network)?;
    let cm = CostModel::new(network, cf, kind);
    let mut c = vec![0.0; x.len()];
    cm.costs(x, &mut c);
    let mut y = vec![0.0; x.len()];
    Loader::new(network).load(network, demand.values(), &c, &mut y, None);
    Ok(gap_of(&c, x, &y))
}

fn gap_of(c: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let cx = dot(c, x);
    if cx > 0.0 {
        (cx - dot(c, y)) / cx
    } else {
        0.0
    }
}

fn validate(network: &Network, demand: &DemandVector, opts: &AssignOptions) -> Result<()> {
    demand.check_len(network)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    Ok(())
}

/// Solves the assignment for the chosen cost kind and algorithm.
pub fn assign(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    kind: CostKind,
    opts: &AssignOptions,
) -> Result<SolverReport> {
    assign_from(network, demand, cf, kind, opts, None)
}

/// Like [`assign`], starting Frank-Wolfe variants from the extreme points of
/// an earlier solve on a network with the same topology and demand.
pub fn assign_warm(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    kind: CostKind,
    opts: &AssignOptions,
    start: &SolverReport,
) -> Result<SolverReport> {
    assign_from(network, demand, cf, kind, opts, start.columns.as_ref())
}

fn assign_from(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    kind: CostKind,
    opts: &AssignOptions,
    warm: Option<&ColumnSet>,
) -> Result<SolverReport> {
    validate(network, demand, opts)?;
    check_costs(network, &network.free_flow_times())?;
    let started = Instant::now();
    let cm = CostModel::new(network, cf, kind);
    let mut report = if demand.total() == 0.0 {
        SolverReport {
            algorithm: opts.algorithm,
            cost: kind,
            flow: FlowState {
                link_flows: vec![0.0; network.link_count()],
                decomposition: opts
                    .track_routes
                    .then(|| vec![Vec::new(); network.od_count()]),
            },
            iterations: 0,
            gap_trace: Vec::new(),
            objective_trace: Vec::new(),
            objective: 0.0,
            relative_gap: 0.0,
            termination: Termination::Converged,
            wall_time_secs: 0.0,
            columns: None,
        }
    } else {
        match opts.algorithm {
            Algorithm::Msa => msa(network, demand, &cm, opts),
            Algorithm::FwClassic => frank_wolfe(network, demand, &cm, opts, false, warm),
            Algorithm::Fw => frank_wolfe(network, demand, &cm, opts, true, warm),
        }
    };
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// User equilibrium by successive averages with step `1/l`, stopping when
/// `|x_l - x_{l-1}| / |x_l| < eps`.
pub fn solve_ue_msa(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    eps: f64,
    max_iter: usize,
) -> Result<SolverReport> {
    let opts = AssignOptions {
        max_iter,
        ..AssignOptions::msa(eps)
    };
    assign(network, demand, cf, CostKind::Travel, &opts)
}

/// User equilibrium by Frank-Wolfe, stopping on the relative duality gap.
pub fn solve_ue_fw(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    rel_gap: f64,
    max_iter: usize,
) -> Result<SolverReport> {
    let opts = AssignOptions {
        max_iter,
        ..AssignOptions::fw(rel_gap)
    };
    assign(network, demand, cf, CostKind::Travel, &opts)
}

/// Social optimum: Frank-Wolfe on marginal costs. The objective is the total
/// latency `sum x t(x)`.
pub fn solve_so(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    tol: f64,
    max_iter: usize,
) -> Result<SolverReport> {
    let opts = AssignOptions {
        max_iter,
        ..AssignOptions::fw(tol)
    };
    assign(network, demand, cf, CostKind::Marginal, &opts)
}

fn msa(network: &Network, demand: &DemandVector, cm: &CostModel, opts: &AssignOptions) -> SolverReport {
    let na = network.link_count();
    let d = demand.values();
    let mut loader = Loader::new(network);
    let mut cols = opts.track_routes.then(|| ColumnSet::new(network.od_count()));
    let mut x = vec![0.0; na];
    let mut y = vec![0.0; na];
    let mut c = vec![0.0; na];
    let mut gap_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut termination = Termination::IterationCap;
    let mut iterations = 0;
    for l in 1..=opts.max_iter {
        iterations = l;
        cm.costs(&x, &mut c);
        let routes = loader.load(network, d, &c, &mut y, cols.as_mut().map(|s| &mut s.pools));
        let step = 1.0 / l as f64;
        let mut change = 0.0;
        for (xa, ya) in x.iter_mut().zip(&y) {
            let dx = step * (ya - *xa);
            *xa += dx;
            change += dx * dx;
        }
        if let Some(cols) = cols.as_mut() {
            cols.blend(&y, routes, step);
        }
        let rg = change.sqrt() / norm(&x);
        gap_trace.push(rg);
        objective_trace.push(cm.objective(&x));
        if rg < opts.tol {
            termination = Termination::Converged;
            break;
        }
    }
    cm.costs(&x, &mut c);
    loader.load(network, d, &c, &mut y, None);
    let relative_gap = gap_of(&c, &x, &y);
    if termination == Termination::IterationCap {
        log::warn!(
            "MSA stopped at the iteration cap ({}) with flow-change ratio {:e}",
            opts.max_iter,
            gap_trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    finish(cm, opts, x, d, cols, iterations, gap_trace, objective_trace, relative_gap, termination)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cm: &CostModel,
    opts: &AssignOptions,
    x: Vec<f64>,
    d: &[f64],
    cols: Option<ColumnSet>,
    iterations: usize,
    gap_trace: Vec<f64>,
    objective_trace: Vec<f64>,
    relative_gap: f64,
    termination: Termination,
) -> SolverReport {
    let decomposition = if opts.track_routes {
        cols.as_ref().map(|c| c.decomposition(d))
    } else {
        None
    };
    SolverReport {
        algorithm: opts.algorithm,
        cost: cm.kind,
        objective: cm.objective(&x),
        flow: FlowState {
            link_flows: x,
            decomposition,
        },
        iterations,
        gap_trace,
        objective_trace,
        relative_gap,
        termination,
        wall_time_secs: 0.0,
        columns: cols,
    }
}

fn frank_wolfe(
    network: &Network,
    demand: &DemandVector,
    cm: &CostModel,
    opts: &AssignOptions,
    simplicial: bool,
    warm: Option<&ColumnSet>,
) -> SolverReport {
    let na = network.link_count();
    let d = demand.values();
    let mut loader = Loader::new(network);
    let use_columns = simplicial || opts.track_routes;
    let mut cols = use_columns.then(|| ColumnSet::new(network.od_count()));
    let mut x = vec![0.0; na];
    let mut y = vec![0.0; na];
    let mut c = vec![0.0; na];
    let mut dir = vec![0.0; na];

    match (warm, cols.as_mut()) {
        (Some(w), Some(cs)) if !w.columns.is_empty() => {
            *cs = w.clone();
            cs.link_flows(&mut x);
        }
        _ => {
            cm.costs(&x, &mut c);
            let routes = loader.load(network, d, &c, &mut x, cols.as_mut().map(|s| &mut s.pools));
            if let Some(cs) = cols.as_mut() {
                cs.blend(&x, routes, 1.0);
            }
        }
    }

    let mut gap_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut termination = Termination::IterationCap;
    let mut relative_gap = f64::INFINITY;
    let mut iterations = 0;
    let mut objective = cm.objective(&x);
    let mut stuck = 0;
    let mut best_gap = f64::INFINITY;
    let master_tol = 0.05 * opts.tol;
    for it in 0..=opts.max_iter {
        cm.costs(&x, &mut c);
        let routes = loader.load(network, d, &c, &mut y, cols.as_mut().map(|s| &mut s.pools));
        relative_gap = gap_of(&c, &x, &y);
        gap_trace.push(relative_gap);
        objective_trace.push(objective);
        iterations = it;
        if relative_gap < opts.tol {
            termination = Termination::Converged;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        for ((da, ya), xa) in dir.iter_mut().zip(&y).zip(&x) {
            *da = ya - xa;
        }
        let alpha = cm.line_search(&x, &dir, 1.0);
        let before = objective;
        if alpha > 0.0 {
            let mut trial = x.clone();
            for (t, da) in trial.iter_mut().zip(&dir) {
                *t = (*t + alpha * da).max(0.0);
            }
            let trial_obj = cm.objective(&trial);
            // near the optimum the decrease drops below the objective's roundoff
            if trial_obj <= objective + 1e-15 * objective.abs() {
                if let Some(cs) = cols.as_mut() {
                    cs.blend(&y, routes, alpha);
                    cs.prune();
                    cs.link_flows(&mut trial);
                    objective = cm.objective(&trial);
                } else {
                    objective = trial_obj;
                }
                x = trial;
            }
        } else if let Some(cs) = cols.as_mut() {
            cs.find_or_insert(&y, routes);
        }
        if simplicial {
            let cs = cols.as_mut().expect("columns kept for the simplicial variant");
            objective = master(cm, cs, &mut x, objective, master_tol);
        }
        if objective < before || relative_gap < best_gap {
            best_gap = best_gap.min(relative_gap);
            stuck = 0;
        } else {
            stuck += 1;
            if stuck >= 3 {
                termination = Termination::Stalled;
                break;
            }
        }
    }
    if termination != Termination::Converged {
        log::warn!(
            "Frank-Wolfe stopped ({:?}) at relative gap {:e} after {} iterations",
            termination,
            relative_gap,
            iterations
        );
    }
    finish(cm, opts, x, d, cols, iterations, gap_trace, objective_trace, relative_gap, termination)
}

/// Re-optimizes the column weights on the simplex. Returns the new objective;
/// never increases it.
fn master(cm: &CostModel, cols: &mut ColumnSet, x: &mut [f64], mut objective: f64, tol: f64) -> f64 {
    const ROUNDS: usize = 30;
    let na = x.len();
    let mut c = vec![0.0; na];
    let mut dc = vec![0.0; na];
    let mut dx = vec![0.0; na];
    let mut trial = vec![0.0; na];
    for _ in 0..ROUNDS {
        let jn = cols.columns.len();
        if jn < 2 {
            break;
        }
        cm.costs(x, &mut c);
        let cx = dot(&c, x);
        let g: Vec<f64> = cols.columns.iter().map(|col| dot(&c, &col.flows)).collect();
        let (jmin, gmin) = argmin(&g);
        let (jmax, _) = argmax(&g);
        if cx - gmin <= tol * cx {
            break;
        }
        for (a, v) in dc.iter_mut().enumerate() {
            *v = cm.derivative(a, x[a]);
        }
        let newton = newton_direction(cols, &dc, &g);
        let pairwise = || {
            let mut d = vec![0.0; jn];
            d[jmin] = 1.0;
            d[jmax] = -1.0;
            d
        };
        let mut accepted = false;
        for dirn in [newton, Some(pairwise())].into_iter().flatten() {
            if dot(&dirn, &g) >= 0.0 {
                continue;
            }
            let (ratio, blocking) = dirn
                .iter()
                .zip(&cols.columns)
                .enumerate()
                .filter(|(_, (dj, _))| **dj < 0.0)
                .map(|(j, (dj, col))| (col.weight / -dj, j))
                .fold((f64::INFINITY, usize::MAX), |acc, v| if v.0 < acc.0 { v } else { acc });
            let cap = ratio.min(1.0);
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (dj, col) in dirn.iter().zip(&cols.columns) {
                if *dj != 0.0 {
                    for (o, f) in dx.iter_mut().zip(&col.flows) {
                        *o += dj * f;
                    }
                }
            }
            let alpha = cm.line_search(x, &dx, cap);
            if alpha <= 0.0 {
                continue;
            }
            let saved: Vec<f64> = cols.columns.iter().map(|col| col.weight).collect();
            for (j, (dj, col)) in dirn.iter().zip(cols.columns.iter_mut()).enumerate() {
                col.weight = if j == blocking && alpha >= ratio {
                    0.0
                } else {
                    (col.weight + alpha * dj).max(0.0)
                };
            }
            let total: f64 = cols.columns.iter().map(|col| col.weight).sum();
            cols.columns.iter_mut().for_each(|col| col.weight /= total);
            cols.link_flows(&mut trial);
            let obj = cm.objective(&trial);
            if obj < objective {
                objective = obj;
                x.copy_from_slice(&trial);
                cols.prune();
                accepted = true;
                break;
            }
            for (col, w) in cols.columns.iter_mut().zip(saved) {
                col.weight = w;
            }
        }
        if !accepted {
            break;
        }
    }
    objective
}

fn argmin(v: &[f64]) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, x)| if x < acc.1 { (j, x) } else { acc })
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, x)| if x > acc.1 { (j, x) } else { acc })
}

/// Newton step for the weights on `sum lambda = 1`, using the Hessian
/// `Y diag(c') Y'` of the objective in weight space.
fn newton_direction(cols: &ColumnSet, dc: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let jn = cols.columns.len();
    let mut h = DMatrix::<f64>::zeros(jn, jn);
    let scaled: Vec<Vec<f64>> = cols
        .columns
        .iter()
        .map(|col| col.flows.iter().zip(dc).map(|(f, d)| f * d).collect())
        .collect();
    for j in 0..jn {
        for k in 0..=j {
            let v = dot(&scaled[j], &cols.columns[k].flows);
            h[(j, k)] = v;
            h[(k, j)] = v;
        }
    }
    let trace: f64 = (0..jn).map(|j| h[(j, j)]).sum();
    let reg = 1e-12 * (trace / jn as f64).max(f64::MIN_POSITIVE) + f64::MIN_POSITIVE;
    for j in 0..jn {
        h[(j, j)] += reg;
    }
    let chol = Cholesky::new(h)?;
    let u = chol.solve(&DVector::from_column_slice(g));
    let v = chol.solve(&DVector::from_element(jn, 1.0));
    let nu = u.sum() / v.sum();
    let d: Vec<f64> = (0..jn).map(|j| nu * v[j] - u[j]).collect();
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Cost comparison of used and cheapest routes for one OD pair.
#[derive(Clone, Debug, Serialize)]
pub struct OdWardrop {
    pub od: usize,
    pub min_cost: f64,
    pub max_used_cost: f64,
    pub excess: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct WardropReport {
    pub tol: f64,
    pub pairs: Vec<OdWardrop>,
    pub pass: bool,
    /// Largest `excess / min_cost` over all pairs.
    pub worst_relative_excess: f64,
}

/// Checks that every route carrying more than `tol * d_w` of an OD demand
/// costs at most `(1 + tol)` times the cheapest route at the flow's times.
pub fn wardrop_check(
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    flow: &FlowState,
    tol: f64,
) -> Result<WardropReport> {
    demand.check_len(network)?;
    let routes = flow.decomposition.as_ref().ok_or(Error::MissingDecomposition)?;
    if routes.len() != network.od_count() || flow.link_flows.len() != network.link_count() {
        return Err(Error::Dimension("flow does not match the network".into()));
    }
    let cm = CostModel::new(network, cf, CostKind::Travel);
    let mut times = vec![0.0; flow.link_flows.len()];
    cm.costs(&flow.link_flows, &mut times);
    let shortest = shortest_routes(network, &times)?;
    let mut pairs = Vec::with_capacity(routes.len());
    let mut worst = 0.0f64;
    for (w, rs) in routes.iter().enumerate() {
        let min_cost = shortest[w].cost;
        let threshold = tol * demand.values()[w];
        let max_used = rs
            .iter()
            .filter(|r| r.flow > threshold)
            .map(|r| r.links.iter().map(|&a| times[a]).sum::<f64>())
            .fold(min_cost, f64::max);
        let excess = max_used - min_cost;
        worst = worst.max(excess / min_cost);
        pairs.push(OdWardrop {
            od: w,
            min_cost,
            max_used_cost: max_used,
            excess,
            pass: excess <= tol * min_cost,
        });
    }
    Ok(WardropReport {
        tol,
        pass: pairs.iter().all(|p| p.pass),
        pairs,
        worst_relative_excess: worst,
    })
}
