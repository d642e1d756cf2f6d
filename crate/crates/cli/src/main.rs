//! `wardrop` command-line interface.

mod commands;
mod config;
mod output;
mod svg;

use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use wardrop::equilibrium::CostKind;

use config::{Flags, RunConfig};
use output::Outputs;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Solver(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Solver(m) => m,
        }
    }
}

impl From<wardrop::Error> for CliError {
    fn from(e: wardrop::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "wardrop", version, about = "Traffic equilibrium, cost and demand estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// User equilibrium link flows.
    Assign(Flags),
    /// System-optimal link flows.
    So(Flags),
    /// Estimate the congestion factor from observed flows.
    EstimateCost(Flags),
    /// Initial OD demand from observed flows by generalized least squares.
    EstimateOd(Flags),
    /// Adjust OD demand so equilibrium flows match observations.
    AdjustOd(Flags),
    /// Price of anarchy, per observed day or at equilibrium.
    Poa(Flags),
    /// Derivatives of the optimal Beckmann value with respect to link parameters.
    Sensitivity(Flags),
    /// Initial demand, adjustment and price of anarchy in one run.
    Pipeline(Flags),
}

impl Command {
    fn split(self) -> (&'static str, Flags) {
        match self {
            Command::Assign(f) => ("assign", f),
            Command::So(f) => ("so", f),
            Command::EstimateCost(f) => ("estimate-cost", f),
            Command::EstimateOd(f) => ("estimate-od", f),
            Command::AdjustOd(f) => ("adjust-od", f),
            Command::Poa(f) => ("poa", f),
            Command::Sensitivity(f) => ("sensitivity", f),
            Command::Pipeline(f) => ("pipeline", f),
        }
    }
}

fn dispatch(name: &str, cfg: &RunConfig, out: &mut Outputs) -> Result<commands::Finished, CliError> {
    match name {
        "assign" => commands::assign_cmd(cfg, out, CostKind::Travel),
        "so" => commands::assign_cmd(cfg, out, CostKind::Marginal),
        "estimate-cost" => commands::estimate_cost_cmd(cfg, out),
        "estimate-od" => commands::estimate_od_cmd(cfg, out),
        "adjust-od" => commands::adjust_od_cmd(cfg, out),
        "poa" => commands::poa_cmd(cfg, out),
        "sensitivity" => commands::sensitivity_cmd(cfg, out),
        "pipeline" => commands::pipeline_cmd(cfg, out),
        _ => unreachable!(),
    }
}

fn summary(name: &str, cfg: Option<&RunConfig>, result: Value, error: Option<&CliError>, artifacts: &[String]) -> Value {
    json!({
        "command": name,
        "status": if error.is_none() { "ok" } else { "error" },
        "exit_code": error.map_or(0, CliError::code),
        "message": error.map(CliError::message),
        "config": cfg,
        "result": result,
        "artifacts": artifacts,
    })
}

fn run(name: &str, flags: Flags) -> ExitCode {
    let out_flag = flags.paths.out.clone();
    let cfg = match RunConfig::resolve(flags) {
        Ok(cfg) => cfg,
        Err(e) => return fail(name, out_flag.as_deref(), None, e),
    };
    let mut out = match Outputs::create(&cfg.paths.out) {
        Ok(out) => out,
        Err(e) => return fail(name, None, Some(&cfg), e),
    };
    let (result, error) = match dispatch(name, &cfg, &mut out) {
        Ok(done) => (done.result, done.failure),
        Err(e) => (Value::Null, Some(e)),
    };
    let mut artifacts = out.written.clone();
    artifacts.push("summary.json".into());
    let doc = summary(name, Some(&cfg), result, error.as_ref(), &artifacts);
    if let Err(e) = out.json("summary.json", &doc) {
        return fail(name, None, None, e);
    }
    match error {
        Some(e) => {
            eprintln!("wardrop {name}: {}", e.message());
            ExitCode::from(e.code())
        }
        None => {
            println!("wardrop {name}: wrote {} files to {}", artifacts.len(), cfg.paths.out.display());
            ExitCode::SUCCESS
        }
    }
}

/// Reports an error raised before the command ran. A summary is written
/// when an output directory is known and can be created.
fn fail(name: &str, dir: Option<&Path>, cfg: Option<&RunConfig>, e: CliError) -> ExitCode {
    eprintln!("wardrop {name}: {}", e.message());
    if let Some(dir) = dir.or(cfg.map(|c| c.paths.out.as_path())) {
        if let Ok(mut out) = Outputs::create(dir) {
            let _ = out.json("summary.json", &summary(name, cfg, Value::Null, Some(&e), &["summary.json".into()]));
        }
    }
    ExitCode::from(e.code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (name, flags) = cli.command.split();
    run(name, flags)
}
