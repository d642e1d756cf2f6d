//! Run configuration. Every setting can come from a command-line flag or a
//! TOML file; flags win over the file and the file wins over defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use wardrop::bilev::JacobianTimes;
use wardrop::equilibrium::{Algorithm, AssignOptions};
use wardrop::inverse::{DualForm, Hyper};
use wardrop::CongestionFactor;

use crate::CliError;

macro_rules! layer {
    ($name:ident { $($field:ident),* $(,)? }) => {
        impl $name {
            fn over(self, lower: Self) -> Self {
                Self { $($field: self.$field.or(lower.$field)),* }
            }
        }
    };
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathArgs {
    /// Network file in the benchmark text format.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Trips file; defines the OD pairs and their demand.
    #[arg(long)]
    pub trips: Option<PathBuf>,
    /// Observed link flows, `link_id,obs_1,...,obs_K`.
    #[arg(long)]
    pub flows: Option<PathBuf>,
    /// Demand CSV `origin,destination,demand` overriding the trips values.
    #[arg(long)]
    pub demand: Option<PathBuf>,
    /// Trips file with reference demand for distance reporting.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Congestion factor JSON as written by `estimate-cost`.
    #[arg(long)]
    pub cost_file: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "WARDROP_OUT")]
    pub out: Option<PathBuf>,
}
layer!(PathArgs { net, trips, flows, demand, reference, cost_file, out });

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Msa,
    Fw,
    FwClassic,
}

impl From<Algo> for Algorithm {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Msa => Algorithm::Msa,
            Algo::Fw => Algorithm::Fw,
            Algo::FwClassic => Algorithm::FwClassic,
        }
    }
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverArgs {
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    /// Relative gap (flow-change ratio for MSA) at which to stop.
    #[arg(long = "rg-tol")]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}
layer!(SolverArgs { algo, tol, max_iter });

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostArgs {
    /// BPR coefficient in `f(u) = 1 + alpha u^power`.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub power: Option<usize>,
    /// Polynomial coefficients `1,b1,...,bn`; overrides alpha and power.
    #[arg(long, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,
}
layer!(CostArgs { alpha, power, beta });

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Duals {
    PerOrigin,
    PerOd,
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationArgs {
    /// Kernel scale grid.
    #[arg(long, value_delimiter = ',')]
    pub c: Option<Vec<f64>>,
    /// Polynomial degree grid.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Slack weight grid.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Demand multiplier of each flow observation.
    #[arg(long, value_delimiter = ',')]
    pub scalings: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub dual_form: Option<Duals>,
    /// Routes per OD pair for demand estimation.
    #[arg(long)]
    pub k_routes: Option<usize>,
}
layer!(EstimationArgs { c, n, gamma, folds, scalings, dual_form, k_routes });

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initial {
    Gls,
    Perturb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Times {
    Congested,
    FreeFlow,
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BilevArgs {
    #[arg(long)]
    pub rho: Option<u32>,
    /// Step reductions per line search.
    #[arg(long = "steps")]
    pub t: Option<u32>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    /// Outer iteration cap.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Perturb the initial demand by uniform[0.8, 1.2] factors from this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub jacobian: Option<Times>,
    #[arg(long, value_enum)]
    pub inner_algo: Option<Algo>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub inner_max_iter: Option<usize>,
    /// Initial demand of `pipeline`.
    #[arg(long, value_enum)]
    pub initial: Option<Initial>,
}
layer!(BilevArgs { rho, t, eps1, eps2, iterations, seed, jacobian, inner_algo, inner_tol, inner_max_iter, initial });

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// Write SVG charts next to the CSV traces.
    #[arg(long)]
    pub svg: Option<bool>,
}
layer!(ReportArgs { svg });

/// Flags shared by every subcommand.
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// TOML file with `[paths]`, `[solver]`, `[cost]`, `[estimation]`,
    /// `[bilev]` and `[report]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub paths: PathArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub bilev: BilevArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    paths: PathArgs,
    solver: SolverArgs,
    cost: CostArgs,
    estimation: EstimationArgs,
    bilev: BilevArgs,
    report: ReportArgs,
}

#[derive(Clone, Debug, Serialize)]
pub struct Paths {
    pub net: Option<PathBuf>,
    pub trips: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub cost_file: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct Solver {
    pub algo: Algo,
    pub tol: f64,
    pub max_iter: usize,
}

impl Solver {
    pub fn options(&self) -> AssignOptions {
        AssignOptions {
            algorithm: self.algo.into(),
            tol: self.tol,
            max_iter: self.max_iter,
            track_routes: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimation {
    pub c: Vec<f64>,
    pub n: Vec<usize>,
    pub gamma: Vec<f64>,
    pub folds: usize,
    pub scalings: Option<Vec<f64>>,
    pub dual_form: Duals,
    pub k_routes: usize,
}

impl Estimation {
    pub fn grid(&self) -> Vec<Hyper> {
        let mut out = Vec::new();
        for &scale in &self.c {
            for &degree in &self.n {
                for &gamma in &self.gamma {
                    out.push(Hyper { scale, degree, gamma });
                }
            }
        }
        out
    }

    pub fn dual_form(&self) -> DualForm {
        match self.dual_form {
            Duals::PerOrigin => DualForm::PerOrigin,
            Duals::PerOd => DualForm::PerOd,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Bilev {
    pub rho: u32,
    pub t: u32,
    pub eps1: f64,
    pub eps2: f64,
    pub iterations: usize,
    pub seed: Option<u64>,
    pub jacobian: Times,
    pub inner: Solver,
    pub initial: Initial,
}

impl Bilev {
    pub fn params(&self) -> wardrop::bilev::BilevParams {
        wardrop::bilev::BilevParams {
            rho: self.rho,
            t: self.t,
            eps1: self.eps1,
            eps2: self.eps2,
            max_iter: self.iterations,
            inner: self.inner.options(),
            jacobian: match self.jacobian {
                Times::Congested => JacobianTimes::Congested,
                Times::FreeFlow => JacobianTimes::FreeFlow,
            },
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub paths: Paths,
    pub solver: Solver,
    pub beta: Vec<f64>,
    pub estimation: Estimation,
    pub bilev: Bilev,
    pub svg: bool,
}

fn default_iterations(algo: Algo) -> usize {
    match algo {
        Algo::Msa => wardrop::equilibrium::DEFAULT_MSA_MAX_ITER,
        _ => wardrop::equilibrium::DEFAULT_FW_MAX_ITER,
    }
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Merges `flags` over the config file they name and checks every
    /// setting, reporting all problems at once.
    pub fn resolve(flags: Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let p = flags.paths.over(file.paths);
        let s = flags.solver.over(file.solver);
        let c = flags.cost.over(file.cost);
        let e = flags.estimation.over(file.estimation);
        let b = flags.bilev.over(file.bilev);
        let r = flags.report.over(file.report);

        let algo = s.algo.unwrap_or(Algo::Fw);
        let inner_algo = b.inner_algo.unwrap_or(Algo::Msa);
        let beta = match (c.beta, c.alpha, c.power) {
            (Some(beta), _, _) => beta,
            (None, alpha, power) => CongestionFactor::bpr(alpha.unwrap_or(0.15), power.unwrap_or(4)).beta().to_vec(),
        };
        let cfg = RunConfig {
            paths: Paths {
                net: p.net,
                trips: p.trips,
                flows: p.flows,
                demand: p.demand,
                reference: p.reference,
                cost_file: p.cost_file,
                out: p.out.unwrap_or_else(|| PathBuf::from("wardrop-out")),
            },
            solver: Solver {
                algo,
                tol: s.tol.unwrap_or(1e-8),
                max_iter: s.max_iter.unwrap_or_else(|| default_iterations(algo)),
            },
            beta,
            estimation: Estimation {
                c: e.c.unwrap_or_else(|| vec![1.5]),
                n: e.n.unwrap_or_else(|| vec![8]),
                gamma: e.gamma.unwrap_or_else(|| vec![1e3]),
                folds: e.folds.unwrap_or(3),
                scalings: e.scalings,
                dual_form: e.dual_form.unwrap_or(Duals::PerOrigin),
                k_routes: e.k_routes.unwrap_or(3),
            },
            bilev: Bilev {
                rho: b.rho.unwrap_or(2),
                t: b.t.unwrap_or(10),
                eps1: b.eps1.unwrap_or(0.0),
                eps2: b.eps2.unwrap_or(1e-20),
                iterations: b.iterations.unwrap_or(7),
                seed: b.seed,
                jacobian: b.jacobian.unwrap_or(Times::Congested),
                inner: Solver {
                    algo: inner_algo,
                    tol: b.inner_tol.unwrap_or(1e-6),
                    max_iter: b.inner_max_iter.unwrap_or_else(|| default_iterations(inner_algo)),
                },
                initial: b.initial.unwrap_or(Initial::Gls),
            },
            svg: r.svg.unwrap_or(true),
        };
        let problems = cfg.problems();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Usage(problems.join("; ")))
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        };
        positive("rg-tol", self.solver.tol);
        positive("inner-tol", self.bilev.inner.tol);
        positive("eps2", self.bilev.eps2);
        self.estimation.c.iter().for_each(|&v| positive("c", v));
        self.estimation.gamma.iter().for_each(|&v| positive("gamma", v));
        if let Some(s) = &self.estimation.scalings {
            s.iter().for_each(|&v| positive("scalings", v));
        }
        if self.bilev.eps1.is_nan() || self.bilev.eps1 < 0.0 {
            out.push(format!("eps1 must be nonnegative, got {}", self.bilev.eps1));
        }
        if self.bilev.rho < 2 {
            out.push(format!("rho must be at least 2, got {}", self.bilev.rho));
        }
        if self.bilev.t < 1 {
            out.push("steps must be at least 1".into());
        }
        if self.estimation.n.contains(&0) {
            out.push("n must be at least 1".into());
        }
        if self.estimation.folds < 2 {
            out.push(format!("folds must be at least 2, got {}", self.estimation.folds));
        }
        if self.estimation.k_routes < 1 {
            out.push("k-routes must be at least 1".into());
        }
        for (name, grid) in [("c", self.estimation.c.len()), ("n", self.estimation.n.len()), ("gamma", self.estimation.gamma.len())] {
            if grid == 0 {
                out.push(format!("{name} grid is empty"));
            }
        }
        if let Err(e) = CongestionFactor::new(self.beta.clone()) {
            out.push(e.to_string());
        }
        out
    }

    /// The named input, or a usage error when it was not given.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        let p = path.as_deref().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))?;
        if !p.exists() {
            return Err(CliError::Data(format!("{} does not exist (--{flag})", p.display())));
        }
        Ok(p)
    }
}
