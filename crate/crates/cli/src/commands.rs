//! Subcommand bodies. Each writes its artifacts and returns the `result`
//! object of the JSON summary.

use serde_json::{json, Value};
use wardrop::analytics::{price_of_anarchy, sensitivity, PoaReport};
use wardrop::bilev::{adjust_demand, perturb_demand, BilevRun};
use wardrop::equilibrium::{assign, CostKind, SolverReport};
use wardrop::gls::{estimate_initial_demand, GlsEstimate};
use wardrop::inverse::{cross_validate, estimate_cost, reproduction_error, InverseVIProblem, Scenario};
use wardrop::network::{load_flows, load_network, load_trips};
use wardrop::{CongestionFactor, DemandVector, FlowState, Network};

use crate::config::{Initial, RunConfig};
use crate::output::{demand_csv, read_demand, row, Outputs, Table};
use crate::svg::{Chart, Series};
use crate::CliError;

/// The summary `result` plus a solver failure to report after the
/// artifacts were written.
pub struct Finished {
    pub result: Value,
    pub failure: Option<CliError>,
}

impl From<Value> for Finished {
    fn from(result: Value) -> Self {
        Finished { result, failure: None }
    }
}

fn network_and_demand(cfg: &RunConfig) -> Result<(Network, DemandVector), CliError> {
    let net = cfg.require(&cfg.paths.net, "net")?;
    let trips = cfg.require(&cfg.paths.trips, "trips")?;
    let (network, trips) = load_network(net, trips)?;
    let demand = match &cfg.paths.demand {
        Some(_) => read_demand(cfg.require(&cfg.paths.demand, "demand")?, &network)?,
        None => trips,
    };
    Ok((network, demand))
}

fn observations(cfg: &RunConfig, network: &Network) -> Result<Vec<FlowState>, CliError> {
    Ok(load_flows(cfg.require(&cfg.paths.flows, "flows")?, network)?)
}

fn congestion(cfg: &RunConfig) -> Result<CongestionFactor, CliError> {
    match &cfg.paths.cost_file {
        Some(_) => {
            let path = cfg.require(&cfg.paths.cost_file, "cost-file")?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        None => Ok(CongestionFactor::new(cfg.beta.clone())?),
    }
}

fn mean_flow(obs: &[FlowState]) -> Vec<f64> {
    let k = obs.len() as f64;
    let mut out = vec![0.0; obs.first().map_or(0, |o| o.link_flows.len())];
    for o in obs {
        for (m, x) in out.iter_mut().zip(&o.link_flows) {
            *m += x / k;
        }
    }
    out
}

fn chart(out: &mut Outputs, cfg: &RunConfig, name: &str, chart: Chart, series: &[Series]) -> Result<(), CliError> {
    if cfg.svg {
        out.write(name, &chart.render(series))?;
    }
    Ok(())
}

pub fn assign_cmd(cfg: &RunConfig, out: &mut Outputs, kind: CostKind) -> Result<Finished, CliError> {
    let (network, demand) = network_and_demand(cfg)?;
    let cf = congestion(cfg)?;
    let report = assign(&network, &demand, &cf, kind, &cfg.solver.options())?;
    write_assignment(cfg, out, &network, &cf, &report)?;
    let result = json!({
        "algorithm": report.algorithm,
        "cost": kind,
        "iterations": report.iterations,
        "relative_gap": report.relative_gap,
        "objective": report.objective,
        "total_latency": wardrop::analytics::total_latency(&network, &cf, &report.flow.link_flows)?,
        "termination": report.termination,
        "converged": report.converged(),
    });
    let failure = report.hit_iteration_cap().then(|| {
        CliError::Solver(format!(
            "iteration cap {} reached at relative gap {:e}",
            cfg.solver.max_iter, report.relative_gap
        ))
    });
    Ok(Finished { result, failure })
}

fn write_assignment(
    cfg: &RunConfig,
    out: &mut Outputs,
    network: &Network,
    cf: &CongestionFactor,
    report: &SolverReport,
) -> Result<(), CliError> {
    let mut flows = Table::new(&["link_id", "tail", "head", "flow", "travel_time"]);
    for (a, (l, &x)) in network.links().iter().zip(&report.flow.link_flows).enumerate() {
        let t = cf.travel_time(l.free_flow_time, l.capacity, x)?;
        flows.row(row![a + 1, network.node_id(l.tail), network.node_id(l.head), x, t]);
    }
    out.write("flows.csv", &flows.finish())?;
    let mut trace = Table::new(&["iteration", "gap", "objective"]);
    for (i, (g, f)) in report.gap_trace.iter().zip(&report.objective_trace).enumerate() {
        trace.row(row![i + 1, *g, *f]);
    }
    out.write("trace.csv", &trace.finish())?;
    chart(
        out,
        cfg,
        "trace.svg",
        Chart {
            title: "Convergence",
            x_label: "iteration",
            y_label: "gap",
            log_y: true,
        },
        &[Series::trace("gap", &report.gap_trace)],
    )
}

pub fn estimate_cost_cmd(cfg: &RunConfig, out: &mut Outputs) -> Result<Finished, CliError> {
    let (network, demand) = network_and_demand(cfg)?;
    let obs = observations(cfg, &network)?;
    let scalings = cfg.estimation.scalings.clone().unwrap_or_else(|| vec![1.0; obs.len()]);
    if scalings.len() != obs.len() {
        return Err(CliError::Usage(format!(
            "{} scalings for {} flow observations",
            scalings.len(),
            obs.len()
        )));
    }
    let scenarios = obs
        .iter()
        .zip(&scalings)
        .map(|(o, &s)| Scenario::new(network.clone(), demand.scaled(s)?, o.link_flows.clone()))
        .collect::<wardrop::Result<Vec<_>>>()?;
    let grid = cfg.estimation.grid();
    let forward = cfg.solver.options();
    let (est, scores) = if grid.len() == 1 {
        let p = InverseVIProblem {
            scenarios: scenarios.clone(),
            hyper: grid[0],
            dual_form: cfg.estimation.dual_form(),
        };
        (estimate_cost(&p)?, Value::Null)
    } else {
        let cv = cross_validate(&scenarios, &grid, cfg.estimation.folds, cfg.estimation.dual_form(), &forward)?;
        let scores = json!(cv.scores);
        (cv.estimate, scores)
    };
    let repro = scenarios
        .iter()
        .map(|s| reproduction_error(s, &est.cf, &forward))
        .collect::<wardrop::Result<Vec<f64>>>()?;

    out.json("cost.json", &est.cf)?;
    let mut diag = Table::new(&["scenario", "scaling", "epsilon", "realized_gap", "reproduction_error"]);
    for k in 0..scenarios.len() {
        diag.row(row![k + 1, scalings[k], est.epsilon[k], est.realized_gap[k], repro[k]]);
    }
    out.write("diagnostics.csv", &diag.finish())?;
    let (lo, hi) = est.observed_range;
    let curve: Vec<(f64, f64)> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).map(|u| (u, est.cf.value(u))).collect();
    chart(
        out,
        cfg,
        "cost.svg",
        Chart {
            title: "Estimated congestion factor",
            x_label: "normalized flow x/m",
            y_label: "f(x/m)",
            log_y: false,
        },
        &[Series {
            label: "estimate".into(),
            points: curve,
        }],
    )?;
    Ok(json!({
        "hyper": est.hyper,
        "degree": est.cf.degree(),
        "beta": est.cf.beta(),
        "epsilon": est.epsilon,
        "realized_gap": est.realized_gap,
        "reproduction_error": repro,
        "dual_violation": est.dual_violation,
        "monotone_violation": est.monotone_violation,
        "observed_range": [lo, hi],
        "qp_iterations": est.qp_iterations,
        "kkt_residual": est.kkt.max(),
        "warnings": est.warnings,
        "cross_validation": scores,
    })
    .into())
}

fn gls_summary(est: &GlsEstimate) -> Value {
    json!({
        "od_pairs": est.demand.len(),
        "routes": est.routes.route_count(),
        "total_demand": est.demand.total(),
        "covariance_ridge": est.covariance_ridge,
        "p1_objective": est.p1.objective,
        "p1_iterations": est.p1.iterations,
        "p1_kkt_residual": est.p1.kkt.max(),
        "p2_residual": est.p2.residual,
        "p2_rounds": est.p2.rounds,
        "warnings": est.p1.warnings,
    })
}

fn write_routes(out: &mut Outputs, network: &Network, est: &GlsEstimate) -> Result<(), CliError> {
    let mut t = Table::new(&["origin", "destination", "route", "links", "choice", "flow"]);
    let mut at = 0;
    for (w, routes) in est.routes.routes.iter().enumerate() {
        let od = network.od_pairs()[w];
        for (r, links) in routes.iter().enumerate() {
            let ids: Vec<String> = links.iter().map(|a| (a + 1).to_string()).collect();
            t.row(row![
                network.node_id(od.origin),
                network.node_id(od.destination),
                r + 1,
                ids.join(" ").as_str(),
                est.p2.choice[w][r],
                est.p1.xi[at]
            ]);
            at += 1;
        }
    }
    out.write("routes.csv", &t.finish())
}

pub fn estimate_od_cmd(cfg: &RunConfig, out: &mut Outputs) -> Result<Finished, CliError> {
    let (network, _) = network_and_demand(cfg)?;
    let obs = observations(cfg, &network)?;
    let est = estimate_initial_demand(&network, &obs, cfg.estimation.k_routes)?;
    out.write("demand.csv", &demand_csv(&network, &est.demand))?;
    write_routes(out, &network, &est)?;
    Ok(gls_summary(&est).into())
}

fn reference_demand(cfg: &RunConfig, network: &Network) -> Result<Option<DemandVector>, CliError> {
    match &cfg.paths.reference {
        Some(_) => Ok(Some(load_trips(cfg.require(&cfg.paths.reference, "reference")?, network)?)),
        None => Ok(None),
    }
}

/// Runs the adjustment from `g0` and writes its artifacts.
fn adjust_stage(
    cfg: &RunConfig,
    out: &mut Outputs,
    network: &Network,
    cf: &CongestionFactor,
    g0: &DemandVector,
    target: &[f64],
) -> Result<(DemandVector, Value), CliError> {
    let (g, mut run) = adjust_demand(network, cf, g0, target, &cfg.bilev.params())?;
    run.seed = cfg.bilev.seed;
    let distance = match reference_demand(cfg, network)? {
        Some(truth) => Some(run.demand_distance(&truth)?),
        None => None,
    };
    out.write("demand.csv", &demand_csv(network, &g))?;
    out.json("bilev.json", &run_json(&run))?;
    let normalized = run.normalized_objective();
    let mut header = vec!["iteration", "objective", "normalized_objective", "step"];
    if distance.is_some() {
        header.push("demand_distance");
    }
    let mut t = Table::new(&header);
    for l in 0..run.objective.len() {
        let step = if l == 0 { 0.0 } else { run.steps[l - 1] };
        let mut cells = row![l, run.objective[l], normalized[l], step];
        if let Some(d) = &distance {
            cells.push(d[l].into());
        }
        t.row(cells);
    }
    out.write("objective.csv", &t.finish())?;
    chart(
        out,
        cfg,
        "objective.svg",
        Chart {
            title: "Normalized objective",
            x_label: "iteration",
            y_label: "F(g)/F(g0)",
            log_y: false,
        },
        &[Series::trace("F(g)/F(g0)", &normalized)],
    )?;
    if let Some(d) = &distance {
        chart(
            out,
            cfg,
            "distance.svg",
            Chart {
                title: "Normalized demand distance",
                x_label: "iteration",
                y_label: "|g - g*|/|g*|",
                log_y: false,
            },
            &[Series::trace("distance", d)],
        )?;
    }
    let summary = json!({
        "termination": run.termination,
        "iterations": run.objective.len() - 1,
        "seed": run.seed,
        "initial_objective": run.objective[0],
        "final_objective": run.objective[run.objective.len() - 1],
        "normalized_objective": normalized,
        "normalized_objective_at_7": run.normalized_objective_at(7),
        "demand_distance": distance,
        "total_demand": g.total(),
    });
    Ok((g, summary))
}

/// The run as JSON without its wall-clock time, so reruns are identical.
fn run_json(run: &BilevRun) -> Value {
    let mut v = json!(run);
    if let Some(m) = v.as_object_mut() {
        m.remove("wall_time_secs");
    }
    v
}

fn initial_demand(cfg: &RunConfig, g: DemandVector) -> Result<DemandVector, CliError> {
    match cfg.bilev.seed {
        Some(seed) => Ok(perturb_demand(&g, 0.8, 1.2, seed)?),
        None => Ok(g),
    }
}

pub fn adjust_od_cmd(cfg: &RunConfig, out: &mut Outputs) -> Result<Finished, CliError> {
    let (network, demand) = network_and_demand(cfg)?;
    let cf = congestion(cfg)?;
    let target = mean_flow(&observations(cfg, &network)?);
    let g0 = initial_demand(cfg, demand)?;
    let (_, summary) = adjust_stage(cfg, out, &network, &cf, &g0, &target)?;
    Ok(summary.into())
}

fn poa_day(day: usize, r: &PoaReport) -> Value {
    json!({
        "day": day,
        "latency_ne": r.latency_ne,
        "latency_so": r.latency_so,
        "poa": r.poa,
        "so_relative_gap": r.so_relative_gap,
    })
}

fn poa_stage(
    cfg: &RunConfig,
    out: &mut Outputs,
    network: &Network,
    demand: &DemandVector,
    cf: &CongestionFactor,
    observed: Option<Vec<Vec<f64>>>,
) -> Result<Value, CliError> {
    let reports = match &observed {
        Some(days) => days
            .iter()
            .map(|x| price_of_anarchy(network, demand, cf, Some(x), cfg.solver.tol))
            .collect::<wardrop::Result<Vec<_>>>()?,
        None => vec![price_of_anarchy(network, demand, cf, None, cfg.solver.tol)?],
    };
    let mut t = Table::new(&["day", "L_ne", "L_so", "poa"]);
    for (d, r) in reports.iter().enumerate() {
        let poa = r.poa.map_or_else(|| "".into(), wardrop::format::sig17);
        t.row(row![d + 1, r.latency_ne, r.latency_so, poa.as_str()]);
    }
    out.write("poa.csv", &t.finish())?;
    let mut header = vec!["link_id".to_string()];
    for d in 1..=reports.len() {
        header.push(format!("L_ne_{d}"));
        header.push(format!("L_so_{d}"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut links = Table::new(&header);
    for a in 0..network.link_count() {
        let mut cells = row![a + 1];
        for r in &reports {
            cells.push(r.link_latency_ne[a].into());
            cells.push(r.link_latency_so[a].into());
        }
        links.row(cells);
    }
    out.write("poa_links.csv", &links.finish())?;
    let values: Vec<f64> = reports.iter().filter_map(|r| r.poa).collect();
    let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    Ok(json!({
        "observed": observed.is_some(),
        "days": reports.iter().enumerate().map(|(d, r)| poa_day(d + 1, r)).collect::<Vec<_>>(),
        "mean_poa": mean,
    }))
}

pub fn poa_cmd(cfg: &RunConfig, out: &mut Outputs) -> Result<Finished, CliError> {
    let (network, demand) = network_and_demand(cfg)?;
    let cf = congestion(cfg)?;
    let observed = match &cfg.paths.flows {
        Some(_) => Some(observations(cfg, &network)?.into_iter().map(|o| o.link_flows).collect()),
        None => None,
    };
    Ok(poa_stage(cfg, out, &network, &demand, &cf, observed)?.into())
}

fn top5(values: impl Iterator<Item = f64>) -> Vec<usize> {
    let v: Vec<f64> = values.collect();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.into_iter().take(5).map(|a| a + 1).collect()
}

pub fn sensitivity_cmd(cfg: &RunConfig, out: &mut Outputs) -> Result<Finished, CliError> {
    let (network, demand) = network_and_demand(cfg)?;
    let cf = congestion(cfg)?;
    let (report, ue) = sensitivity(&network, &demand, &cf, cfg.solver.tol)?;
    let mut t = Table::new(&["link", "dV_dt0", "dV_dm", "scaled_dV_dt0", "scaled_dV_dm"]);
    for s in &report.links {
        t.row(row![
            s.link + 1,
            s.d_free_flow_time,
            s.d_capacity,
            s.scaled_d_free_flow_time,
            s.scaled_d_capacity
        ]);
    }
    out.write("sensitivity.csv", &t.finish())?;
    let result = json!({
        "value": report.value,
        "relative_gap": report.relative_gap,
        "iterations": ue.iterations,
        "top_free_flow_time": top5(report.links.iter().map(|s| s.scaled_d_free_flow_time)),
        "top_capacity": top5(report.links.iter().map(|s| s.scaled_d_capacity)),
    });
    let failure = ue
        .hit_iteration_cap()
        .then(|| CliError::Solver(format!("equilibrium stopped at relative gap {:e}", ue.relative_gap)));
    Ok(Finished { result, failure })
}

pub fn pipeline_cmd(cfg: &RunConfig, out: &mut Outputs) -> Result<Finished, CliError> {
    let (network, demand) = network_and_demand(cfg)?;
    let cf = congestion(cfg)?;
    let obs = observations(cfg, &network)?;
    let target = mean_flow(&obs);
    let (g0, gls) = match cfg.bilev.initial {
        Initial::Gls => {
            let est = estimate_initial_demand(&network, &obs, cfg.estimation.k_routes)?;
            out.write("initial_demand.csv", &demand_csv(&network, &est.demand))?;
            write_routes(out, &network, &est)?;
            (est.demand.clone(), gls_summary(&est))
        }
        Initial::Perturb => (initial_demand(cfg, demand)?, Value::Null),
    };
    let (g, adjusted) = adjust_stage(cfg, out, &network, &cf, &g0, &target)?;
    let poa = poa_stage(cfg, out, &network, &g, &cf, Some(vec![target]))?;
    Ok(json!({
        "initial": cfg.bilev.initial,
        "estimate_od": gls,
        "adjust_od": adjusted,
        "poa": poa,
    })
    .into())
}
