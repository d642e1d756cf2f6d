use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use wardrop::equilibrium::{solve_ue_fw, solve_ue_msa};
use wardrop::fixtures::{self, Fixture};
use wardrop::network::{write_flows, write_net, write_trips};
use wardrop::FlowState;

fn wardrop() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wardrop"));
    cmd.env_remove("WARDROP_OUT");
    cmd
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn sioux_falls_args(cmd: &mut Command) -> &mut Command {
    cmd.arg("--net")
        .arg(data("SiouxFalls_net.tntp"))
        .arg("--trips")
        .arg(data("SiouxFalls_trips.tntp"))
}

/// Writes the fixture's network, trips and `days` copies of its
/// equilibrium flows into `dir`.
fn write_case(dir: &Path, f: &Fixture, days: usize) -> [PathBuf; 3] {
    let net = dir.join("net.tntp");
    let trips = dir.join("trips.tntp");
    let flows = dir.join("flows.csv");
    fs::write(&net, write_net(&f.network)).unwrap();
    fs::write(&trips, write_trips(&f.network, &f.demand).unwrap()).unwrap();
    let ue = solve_ue_fw(&f.network, &f.demand, &f.cf, 1e-10, 2000).unwrap();
    fs::write(&flows, write_flows(&vec![ue.flow; days])).unwrap();
    [net, trips, flows]
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_and_bad_usage_exit_codes() {
    assert_eq!(code(&wardrop().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&wardrop().arg("--version").output().unwrap()), 0);
    assert_eq!(code(&wardrop().output().unwrap()), 1);
    assert_eq!(code(&wardrop().args(["assign", "--rho", "two"]).output().unwrap()), 1);

    let dir = TempDir::new().unwrap();
    let o = wardrop().arg("assign").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--net"));

    let out = dir.path().join("bad");
    let o = sioux_falls_args(wardrop().arg("adjust-od"))
        .args(["--rho", "1", "--rg-tol=-1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rho") && err.contains("rg-tol"), "{err}");
    let s = summary(&out);
    assert_eq!(s["exit_code"], 1);
    assert!(s["config"].is_null());
}

#[test]
fn missing_input_is_a_data_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere_trips.tntp");
    let out = dir.path().join("out");
    let o = wardrop()
        .arg("assign")
        .arg("--net")
        .arg(data("SiouxFalls_net.tntp"))
        .arg("--trips")
        .arg(&missing)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere_trips.tntp"));
    let s = summary(&out);
    assert_eq!(s["status"], "error");
    assert_eq!(s["exit_code"], 2);
    assert!(s["message"].as_str().unwrap().contains("nowhere_trips.tntp"));
}

#[test]
fn malformed_flows_are_a_data_error() {
    let dir = TempDir::new().unwrap();
    let flows = dir.path().join("flows.csv");
    fs::write(&flows, "link_id,obs_1\n1,abc\n").unwrap();
    let o = sioux_falls_args(wardrop().arg("poa"))
        .arg("--flows")
        .arg(&flows)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn iteration_cap_is_a_solver_error() {
    let dir = TempDir::new().unwrap();
    let o = sioux_falls_args(wardrop().arg("assign"))
        .args(["--max-iter", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
    let s = summary(dir.path());
    assert_eq!(s["exit_code"], 3);
    assert_eq!(s["result"]["termination"], "iteration-cap");
    assert!(dir.path().join("flows.csv").exists());
}

#[test]
fn sioux_falls_assignment_converges() {
    let dir = TempDir::new().unwrap();
    let o = sioux_falls_args(wardrop().arg("assign")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path());
    assert!(s["result"]["relative_gap"].as_f64().unwrap() <= 1e-8);
    for name in ["flows.csv", "trace.csv", "trace.svg", "summary.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let flows = fs::read_to_string(dir.path().join("flows.csv")).unwrap();
    assert_eq!(flows.lines().count(), 77);

    let so = dir.path().join("so");
    let o = sioux_falls_args(wardrop().arg("so")).arg("--out").arg(&so).output().unwrap();
    assert_eq!(code(&o), 0);
    let ue_latency = s["result"]["total_latency"].as_f64().unwrap();
    let so_latency = summary(&so)["result"]["total_latency"].as_f64().unwrap();
    assert!(so_latency <= ue_latency);
}

fn all_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let f = fixtures::interstate();
    let [net, trips, flows] = write_case(dir.path(), &f, 1);
    let out = dir.path().join("out");
    let run = || {
        let o = wardrop()
            .arg("pipeline")
            .arg("--net")
            .arg(&net)
            .arg("--trips")
            .arg(&trips)
            .arg("--flows")
            .arg(&flows)
            .args(["--initial", "perturb", "--seed", "4", "--iterations", "3", "--out"])
            .arg(&out)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        all_files(&out)
    };
    let first = run();
    assert!(first.iter().any(|(n, _)| n == "bilev.json"));
    assert_eq!(first, run());
}

#[test]
fn config_file_env_and_flags_layer() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    let from_file = dir.path().join("from_file");
    let from_env = dir.path().join("from_env");
    let from_flag = dir.path().join("from_flag");
    fs::write(
        &config,
        format!(
            "[paths]\nnet = {:?}\ntrips = {:?}\nout = {:?}\n[solver]\nalgo = \"msa\"\ntol = 1e-2\nmax_iter = 500\n",
            data("SiouxFalls_net.tntp"),
            data("SiouxFalls_trips.tntp"),
            from_file
        ),
    )
    .unwrap();

    let o = wardrop().arg("assign").arg("--config").arg(&config).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&from_file);
    assert_eq!(s["config"]["solver"]["algo"], "msa");
    assert_eq!(s["config"]["solver"]["tol"], 1e-2);

    let o = wardrop()
        .arg("assign")
        .arg("--config")
        .arg(&config)
        .args(["--rg-tol", "1e-3"])
        .env("WARDROP_OUT", &from_env)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let s = summary(&from_env);
    assert_eq!(s["config"]["solver"]["tol"], 1e-3);
    assert_eq!(s["config"]["solver"]["algo"], "msa");

    let o = wardrop()
        .arg("assign")
        .arg("--config")
        .arg(&config)
        .args(["--algo", "fw", "--out"])
        .arg(&from_flag)
        .env("WARDROP_OUT", &from_env)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(summary(&from_flag)["config"]["solver"]["algo"], "fw");
    assert_eq!(summary(&from_flag)["config"]["solver"]["max_iter"], 500);

    fs::write(&config, "[solver]\nalgorithm = \"fw\"\n").unwrap();
    let o = wardrop().arg("assign").arg("--config").arg(&config).output().unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn cost_estimate_reproduces_flows() {
    let dir = TempDir::new().unwrap();
    let f = fixtures::interstate();
    let [net, trips, flows] = write_case(dir.path(), &f, 1);
    let out = dir.path().join("cost");
    let o = wardrop()
        .arg("estimate-cost")
        .arg("--net")
        .arg(&net)
        .arg("--trips")
        .arg(&trips)
        .arg("--flows")
        .arg(&flows)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert!(s["result"]["reproduction_error"][0].as_f64().unwrap() < 0.02);
    for name in ["cost.json", "diagnostics.csv", "cost.svg"] {
        assert!(out.join(name).exists(), "{name}");
    }

    let poa = dir.path().join("poa");
    let o = wardrop()
        .arg("poa")
        .arg("--net")
        .arg(&net)
        .arg("--trips")
        .arg(&trips)
        .arg("--cost-file")
        .arg(out.join("cost.json"))
        .arg("--out")
        .arg(&poa)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(summary(&poa)["result"]["mean_poa"].as_f64().unwrap() >= 1.0 - 1e-9);
}

#[test]
fn demand_estimate_writes_routes_and_demand() {
    let dir = TempDir::new().unwrap();
    let f = fixtures::interstate();
    let [net, trips, _] = write_case(dir.path(), &f, 1);
    let ue = solve_ue_fw(&f.network, &f.demand, &f.cf, 1e-10, 2000).unwrap();
    let days: Vec<FlowState> = (0..6)
        .map(|k| {
            let x = ue
                .flow
                .link_flows
                .iter()
                .enumerate()
                .map(|(a, v)| v * (1.0 + 0.03 * ((7 * a + 3 * k) as f64).sin()))
                .collect();
            FlowState::from_link_flows(x).unwrap()
        })
        .collect();
    let flows = dir.path().join("noisy.csv");
    fs::write(&flows, write_flows(&days)).unwrap();
    let out = dir.path().join("out");
    let o = wardrop()
        .arg("estimate-od")
        .arg("--net")
        .arg(&net)
        .arg("--trips")
        .arg(&trips)
        .arg("--flows")
        .arg(&flows)
        .args(["--k-routes", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("demand.csv")).unwrap();
    let estimated: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(estimated.len(), f.demand.len());
    assert!(estimated.iter().all(|&g| g >= 0.0));
    let s = summary(&out);
    assert_eq!(s["result"]["routes"], 2 * f.demand.len());
    let routes = fs::read_to_string(out.join("routes.csv")).unwrap();
    assert_eq!(routes.lines().count(), 1 + 2 * f.demand.len());
}

#[test]
fn sioux_falls_pipeline_reduces_the_objective() {
    let dir = TempDir::new().unwrap();
    let sf = fixtures::sioux_falls();
    let target = solve_ue_msa(&sf.network, &sf.demand, &sf.cf, 1e-6, 5000).unwrap();
    let flows = dir.path().join("flows.csv");
    fs::write(&flows, write_flows(&[target.flow])).unwrap();
    let out = dir.path().join("out");
    let o = sioux_falls_args(wardrop().arg("pipeline"))
        .arg("--flows")
        .arg(&flows)
        .args(["--initial", "perturb", "--seed", "3", "--reference"])
        .arg(data("SiouxFalls_trips.tntp"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    let adjusted = &s["result"]["adjust_od"];
    assert!(adjusted["normalized_objective_at_7"].as_f64().unwrap() <= 0.35, "{adjusted}");
    assert_eq!(adjusted["demand_distance"].as_array().unwrap().len(), 8);
    for name in ["demand.csv", "bilev.json", "objective.csv", "objective.svg", "distance.svg", "poa.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let bilev: Value = serde_json::from_str(&fs::read_to_string(out.join("bilev.json")).unwrap()).unwrap();
    assert!(bilev.get("wall_time_secs").is_none());
}
