//! Estimation of the congestion factor `f` from observed equilibria by the
//! polynomial inverse variational-inequality program.
//!
//! Each scenario contributes dual prices `y` (node potentials), one
//! dual-feasibility row per link and price vector, and a primal-dual gap row
//! bounded by `eps_k`. The gap row is divided by `S_k = sum_a t0_a x_a` so
//! that `eps_k` is a relative gap. `beta_0` is fixed to 1 and substituted out.
//!
//! The monotonicity rows range over the links of all scenarios; only links
//! adjacent in the sorted order of normalized flow `x_a / m_a` are compared,
//! which implies the full pairwise condition by transitivity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{assign, AssignOptions, CostKind};
use crate::error::{Error, Result};
use crate::latency::CongestionFactor;
use crate::network::{DemandVector, Network};
use crate::paths::SearchSpace;
use crate::qp::{solve_qp_with, KktResiduals, QpOptions, QuadProgram};

/// One observed equilibrium: a network, its demand and link flows.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub network: Network,
    pub demand: DemandVector,
    pub flow: Vec<f64>,
}

impl Scenario {
    pub fn new(network: Network, demand: DemandVector, flow: Vec<f64>) -> Result<Self> {
        demand.check_len(&network)?;
        if flow.len() != network.link_count() {
            return Err(Error::Dimension(format!(
                "{} flows for {} links",
                flow.len(),
                network.link_count()
            )));
        }
        if let Some((a, &v)) = flow.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NegativeFlow {
                link: a + 1,
                observation: 1,
                value: v,
            });
        }
        Ok(Self { network, demand, flow })
    }

    fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.network.links().iter().zip(&self.flow).map(|(l, &x)| x / l.capacity)
    }

    /// `sum_a t0_a x_a`, the gap normalizer.
    fn scale(&self) -> f64 {
        self.network
            .links()
            .iter()
            .zip(&self.flow)
            .map(|(l, &x)| l.free_flow_time * x)
            .sum()
    }
}

/// How dual prices are indexed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualForm {
    /// One price vector per origin, shared by its OD pairs. Same optimum as
    /// `PerOd` with far fewer rows.
    #[default]
    PerOrigin,
    /// One price vector per OD pair.
    PerOd,
}

/// Kernel hyperparameters: `phi(x, y) = (c + x y)^n` and the weight `gamma`
/// on `|eps|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub scale: f64,
    pub degree: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug)]
pub struct InverseVIProblem {
    pub scenarios: Vec<Scenario>,
    pub hyper: Hyper,
    pub dual_form: DualForm,
}

/// A built program together with its variable map.
#[derive(Clone, Debug)]
pub struct InverseQp {
    pub program: QuadProgram,
    pub degree: usize,
    /// First variable of each scenario's price block; prices for one
    /// vector occupy `node_count - 1` consecutive slots.
    pub price_offsets: Vec<usize>,
    /// Price-vector owners per scenario: origin nodes (per origin) or OD
    /// indices (per OD pair).
    pub price_owners: Vec<Vec<usize>>,
    pub dual_rows: usize,
    pub monotone_rows: usize,
    pub gap_rows: usize,
    pub gap_scales: Vec<f64>,
    /// Smallest and largest observed normalized flow.
    pub observed_range: (f64, f64),
    /// Variable `i` holds `beta_i * level_scale^i`, the largest observed
    /// normalized flow, to keep coefficients near unit size.
    pub level_scale: f64,
    dual_form: DualForm,
}

impl InverseQp {
    pub fn epsilon_index(&self, k: usize) -> usize {
        self.degree + k
    }

    fn price_index(&self, k: usize, owner_slot: usize, pinned: usize, node: usize) -> Option<usize> {
        if node == pinned {
            return None;
        }
        let nodes = self.block_len(k);
        let j = if node > pinned { node - 1 } else { node };
        Some(self.price_offsets[k] + owner_slot * nodes + j)
    }

    fn block_len(&self, k: usize) -> usize {
        let count = self.price_owners[k].len().max(1);
        let next = self.price_offsets.get(k + 1).copied().unwrap_or(self.program.dim());
        (next - self.price_offsets[k]) / count
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check(p: &InverseVIProblem) -> Result<()> {
    if p.scenarios.is_empty() {
        return Err(Error::InsufficientData("no scenarios".into()));
    }
    let h = p.hyper;
    if h.degree == 0 {
        return Err(Error::InvalidArgument("degree must be at least 1".into()));
    }
    if !(h.scale > 0.0 && h.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("kernel scale must be positive, got {}", h.scale)));
    }
    if !(h.gamma > 0.0 && h.gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", h.gamma)));
    }
    for (k, s) in p.scenarios.iter().enumerate() {
        if s.demand.total() <= 0.0 {
            return Err(Error::InvalidArgument(format!("scenario {} has zero demand", k + 1)));
        }
        if s.scale() <= 0.0 {
            return Err(Error::InvalidArgument(format!("scenario {} carries no flow", k + 1)));
        }
    }
    Ok(())
}

/// Sorted distinct normalized flows over all scenarios.
fn distinct_levels(scenarios: &[Scenario]) -> Vec<f64> {
    let mut u: Vec<f64> = scenarios.iter().flat_map(|s| s.normalized()).collect();
    u.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(u.len());
    for v in u {
        match out.last() {
            Some(&last) if v - last <= 1e-12 * last.max(1.0) => {}
            _ => out.push(v),
        }
    }
    out
}

pub fn build_inverse_qp(p: &InverseVIProblem) -> Result<InverseQp> {
    check(p)?;
    let n = p.hyper.degree;
    let k_count = p.scenarios.len();
    let border = n + k_count;

    let mut price_offsets = Vec::with_capacity(k_count);
    let mut price_owners = Vec::with_capacity(k_count);
    let mut blocks = Vec::new();
    let mut next = border;
    for s in &p.scenarios {
        let owners: Vec<usize> = match p.dual_form {
            DualForm::PerOrigin => s
                .network
                .origin_groups()
                .iter()
                .filter(|g| g.pairs.iter().any(|&(w, _)| s.demand.values()[w] > 0.0))
                .map(|g| g.origin)
                .collect(),
            DualForm::PerOd => (0..s.network.od_count()).filter(|&w| s.demand.values()[w] > 0.0).collect(),
        };
        let len = s.network.node_count() - 1;
        price_offsets.push(next);
        next += owners.len() * len;
        blocks.extend(std::iter::repeat_n(len, owners.len()));
        price_owners.push(owners);
    }

    let mut qp = InverseQp {
        program: QuadProgram::new(next),
        degree: n,
        price_offsets,
        price_owners,
        dual_rows: 0,
        monotone_rows: 0,
        gap_rows: 0,
        gap_scales: Vec::with_capacity(k_count),
        observed_range: (0.0, 0.0),
        level_scale: 1.0,
        dual_form: p.dual_form,
    };

    let levels = distinct_levels(&p.scenarios);
    qp.observed_range = (levels[0], *levels.last().expect("nonempty"));
    let top = if qp.observed_range.1 > 0.0 { qp.observed_range.1 } else { 1.0 };
    qp.level_scale = top;
    for i in 1..=n {
        let weight = binomial(n, i) * p.hyper.scale.powi((n - i) as i32) * top.powi(2 * i as i32);
        qp.program.add_quadratic(i - 1, i - 1, 2.0 / weight);
    }
    for k in 0..k_count {
        qp.program.add_quadratic(n + k, n + k, 2.0 * p.hyper.gamma);
        qp.program.set_lower_bound(n + k, 0.0);
    }

    for (k, s) in p.scenarios.iter().enumerate() {
        let net = &s.network;
        let d = s.demand.values();
        let owners = qp.price_owners[k].clone();
        let mut rows = Vec::new();
        for (slot, &owner) in owners.iter().enumerate() {
            let pinned = match p.dual_form {
                DualForm::PerOrigin => owner,
                DualForm::PerOd => net.od_pairs()[owner].origin,
            };
            for (l, &x) in net.links().iter().zip(&s.flow) {
                let u = x / l.capacity / top;
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(n + 2);
                if let Some(j) = qp.price_index(k, slot, pinned, l.head) {
                    row.push((j, 1.0));
                }
                if let Some(j) = qp.price_index(k, slot, pinned, l.tail) {
                    row.push((j, -1.0));
                }
                let mut upow = u;
                for i in 1..=n {
                    row.push((i - 1, -l.free_flow_time * upow));
                    upow *= u;
                }
                rows.push((row, l.free_flow_time));
            }
        }
        for (row, rhs) in rows {
            qp.program.add_upper_inequality(&row, rhs);
            qp.dual_rows += 1;
        }

        let scale = s.scale();
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 1..=n {
            let c: f64 = net
                .links()
                .iter()
                .zip(&s.flow)
                .map(|(l, &x)| l.free_flow_time * x * (x / l.capacity / top).powi(i as i32))
                .sum();
            row.push((i - 1, c / scale));
        }
        row.push((n + k, -1.0));
        for (slot, &owner) in owners.iter().enumerate() {
            match p.dual_form {
                DualForm::PerOrigin => {
                    let group = net.origin_groups().iter().find(|g| g.origin == owner).expect("owner is an origin");
                    for &(w, dest) in &group.pairs {
                        if let Some(j) = qp.price_index(k, slot, owner, dest) {
                            row.push((j, -d[w] / scale));
                        }
                    }
                }
                DualForm::PerOd => {
                    let od = net.od_pairs()[owner];
                    if let Some(j) = qp.price_index(k, slot, od.origin, od.destination) {
                        row.push((j, -d[owner] / scale));
                    }
                }
            }
        }
        qp.program.add_upper_inequality(&row, -1.0);
        qp.gap_rows += 1;
        qp.gap_scales.push(scale);
    }

    for pair in levels.windows(2) {
        let (a, b) = (pair[0] / top, pair[1] / top);
        let row: Vec<(usize, f64)> = (1..=n)
            .map(|i| (i - 1, b.powi(i as i32) - a.powi(i as i32)))
            .collect();
        qp.program.add_inequality(&row, 0.0);
        qp.monotone_rows += 1;
    }

    qp.program
        .set_block_layout(border, blocks)
        .map_err(Error::Qp)?;
    Ok(qp)
}

/// Result of [`estimate_cost`].
#[derive(Clone, Debug, Serialize)]
pub struct CostEstimate {
    pub hyper: Hyper,
    pub cf: CongestionFactor,
    /// Relative gap slack `eps_k` per scenario.
    pub epsilon: Vec<f64>,
    /// Actual relative primal-dual gap of each scenario under the estimate,
    /// measured against shortest-route costs.
    pub realized_gap: Vec<f64>,
    /// Largest violation of `y_head - y_tail <= t_a` by the returned prices.
    pub dual_violation: f64,
    /// Largest decrease of the estimate between adjacent observed levels.
    pub monotone_violation: f64,
    pub observed_range: (f64, f64),
    pub dual_rows: usize,
    pub monotone_rows: usize,
    pub qp_iterations: usize,
    pub kkt: KktResiduals,
    pub warnings: Vec<String>,
    /// Per scenario, per price owner: node potentials with the pinned origin
    /// included as zero.
    #[serde(skip)]
    pub prices: Vec<Vec<Vec<f64>>>,
}

pub fn estimate_cost(p: &InverseVIProblem) -> Result<CostEstimate> {
    estimate_cost_with(p, &QpOptions::default())
}

pub fn estimate_cost_with(p: &InverseVIProblem, opts: &QpOptions) -> Result<CostEstimate> {
    let qp = build_inverse_qp(p)?;
    let sol = solve_qp_with(&qp.program, opts)?;
    let n = qp.degree;
    let mut beta = vec![1.0];
    beta.extend((1..=n).map(|i| sol.z[i - 1] / qp.level_scale.powi(i as i32)));
    let cf = CongestionFactor::new(beta)?;
    let epsilon: Vec<f64> = (0..p.scenarios.len()).map(|k| sol.z[qp.epsilon_index(k)].max(0.0)).collect();

    let mut prices = Vec::with_capacity(p.scenarios.len());
    let mut dual_violation = 0.0f64;
    for (k, s) in p.scenarios.iter().enumerate() {
        let mut per_owner = Vec::new();
        for (slot, &owner) in qp.price_owners[k].iter().enumerate() {
            let pinned = match qp.dual_form {
                DualForm::PerOrigin => owner,
                DualForm::PerOd => s.network.od_pairs()[owner].origin,
            };
            let y: Vec<f64> = (0..s.network.node_count())
                .map(|v| qp.price_index(k, slot, pinned, v).map_or(0.0, |j| sol.z[j]))
                .collect();
            for (l, &x) in s.network.links().iter().zip(&s.flow) {
                let t = l.free_flow_time * cf.value(x / l.capacity);
                dual_violation = dual_violation.max(y[l.head] - y[l.tail] - t);
            }
            per_owner.push(y);
        }
        prices.push(per_owner);
    }

    let levels = distinct_levels(&p.scenarios);
    let monotone_violation = levels
        .windows(2)
        .map(|w| cf.value(w[0]) - cf.value(w[1]))
        .fold(0.0f64, f64::max);

    let realized_gap = p.scenarios.iter().map(|s| realized_gap(s, &cf)).collect();

    Ok(CostEstimate {
        hyper: p.hyper,
        cf,
        epsilon,
        realized_gap,
        dual_violation,
        monotone_violation,
        observed_range: qp.observed_range,
        dual_rows: qp.dual_rows,
        monotone_rows: qp.monotone_rows,
        qp_iterations: sol.iterations,
        kkt: sol.residuals,
        warnings: sol.warnings,
        prices,
    })
}

/// `(sum_a t_a x_a - sum_w d_w c_w) / sum_a t0_a x_a` with `c_w` the
/// shortest-route cost at the observed flows.
fn realized_gap(s: &Scenario, cf: &CongestionFactor) -> f64 {
    let net = &s.network;
    let costs: Vec<f64> = net
        .links()
        .iter()
        .zip(&s.flow)
        .map(|(l, &x)| l.free_flow_time * cf.value(x / l.capacity))
        .collect();
    let total: f64 = costs.iter().zip(&s.flow).map(|(c, x)| c * x).sum();
    let mut space = SearchSpace::new(net.node_count());
    let mut shortest = 0.0;
    for g in net.origin_groups() {
        space.search(net, &costs, g.origin, None, None, None);
        for &(w, dest) in &g.pairs {
            let d = s.demand.values()[w];
            if d > 0.0 {
                shortest += d * space.dist[dest];
            }
        }
    }
    (total - shortest) / s.scale()
}

/// Held-out score of one hyperparameter choice.
#[derive(Clone, Debug, Serialize)]
pub struct CvScore {
    pub hyper: Hyper,
    /// Mean over folds of `|x(g) - x~| / |x~|` on the held-out scenarios.
    pub error: f64,
    pub fold_errors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossValidation {
    pub best: Hyper,
    pub scores: Vec<CvScore>,
    /// Held-out scenario indices per fold.
    pub folds: Vec<Vec<usize>>,
    /// Refit on all scenarios with the selected hyperparameters.
    pub estimate: CostEstimate,
}

/// Scenario `k` is held out in fold `k mod folds`.
pub fn fold_assignment(scenarios: usize, folds: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); folds];
    for k in 0..scenarios {
        out[k % folds].push(k);
    }
    out
}

/// Relative flow reproduction error `|x(g) - x~| / |x~|` of `cf` on `s`.
pub fn reproduction_error(s: &Scenario, cf: &CongestionFactor, forward: &AssignOptions) -> Result<f64> {
    let report = assign(&s.network, &s.demand, cf, CostKind::Travel, forward)?;
    let num: f64 = report
        .flow
        .link_flows
        .iter()
        .zip(&s.flow)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = s.flow.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(if den > 0.0 { num / den } else { num })
}

/// Chooses `(c, n, gamma)` from `grid` by k-fold held-out flow reproduction
/// error, then refits on all scenarios.
pub fn cross_validate(
    scenarios: &[Scenario],
    grid: &[Hyper],
    folds: usize,
    dual_form: DualForm,
    forward: &AssignOptions,
) -> Result<CrossValidation> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    if folds < 2 || scenarios.len() < folds {
        return Err(Error::InsufficientData(format!(
            "{} scenarios cannot form {folds} folds",
            scenarios.len()
        )));
    }
    let assignment = fold_assignment(scenarios.len(), folds);
    let mut scores = Vec::with_capacity(grid.len());
    for &hyper in grid {
        let fold_errors = assignment
            .par_iter()
            .map(|held| {
                let train: Vec<Scenario> = scenarios
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !held.contains(k))
                    .map(|(_, s)| s.clone())
                    .collect();
                let est = estimate_cost(&InverseVIProblem {
                    scenarios: train,
                    hyper,
                    dual_form,
                })?;
                let mut err = 0.0;
                for &k in held {
                    err += reproduction_error(&scenarios[k], &est.cf, forward)?;
                }
                Ok(err / held.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let error = fold_errors.iter().sum::<f64>() / fold_errors.len() as f64;
        scores.push(CvScore {
            hyper,
            error,
            fold_errors,
        });
    }
    let best = scores
        .iter()
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .expect("nonempty grid")
        .hyper;
    let estimate = estimate_cost(&InverseVIProblem {
        scenarios: scenarios.to_vec(),
        hyper: best,
        dual_form,
    })?;
    Ok(CrossValidation {
        best,
        scores,
        folds: assignment,
        estimate,
    })
}
