use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use shortfall_core::cli::{exit_code, EXIT_CONFIG, EXIT_GRID_ESCAPE};
use shortfall_core::error::Error;

fn shortfall(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shortfall"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHORTFALL_CONFIG")
        .output()
        .expect("binary runs")
}

fn json_at(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn snell_writes_json_with_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = shortfall(&["snell", "--n", "6", "--strike", "1.05"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let doc = json_at(&dir.path().join("snell.json"));
    assert_eq!(doc["format_version"], 1);
    assert_eq!(doc["config"]["n"], 6);
    assert_eq!(doc["config"]["payoff"]["strike"], 1.05);
    assert!(doc["result"]["snell"].as_f64().unwrap() > 0.0);
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"n": 3, "lambda": 0.05, "payoff": "put"}"#).unwrap();
    let cfg_arg = cfg.to_str().unwrap();
    let out = shortfall(&["snell", "--config", cfg_arg, "--n", "2", "--out", "a.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json_at(&dir.path().join("a.json"));
    assert_eq!(doc["config"]["n"], 2);
    assert_eq!(doc["config"]["frictions"]["lambda"], 0.05);
    assert_eq!(doc["config"]["frictions"]["mu"], 0.01);
    assert_eq!(doc["config"]["payoff"]["kind"], "put");

    let via_env = Command::new(env!("CARGO_BIN_EXE_shortfall"))
        .args(["snell", "--out", "b.json"])
        .current_dir(dir.path())
        .env("SHORTFALL_CONFIG", cfg_arg)
        .output()
        .unwrap();
    assert!(via_env.status.success());
    assert_eq!(json_at(&dir.path().join("b.json"))["config"]["n"], 3);

    std::fs::write(&cfg, r#"{"n": 3, "bogus": 1}"#).unwrap();
    assert_eq!(shortfall(&["snell", "--config", cfg_arg], dir.path()).status.code(), Some(EXIT_CONFIG));
}

#[test]
fn csv_goes_to_stdout_and_json_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let out = shortfall(&["risk", "--n", "2", "--x", "0.02", "--format", "csv"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# format_version=1\n"));
    assert!(text.contains("# config={"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "2");
    let refused = shortfall(&["risk", "--n", "2", "--out", "-"], dir.path());
    assert_eq!(refused.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn oracle_reports_both_values_and_refuses_long_lattices() {
    let dir = tempfile::tempdir().unwrap();
    let out = shortfall(&["oracle", "--n", "2", "--x", "0.03", "--format", "csv"], dir.path());
    assert!(out.status.success());
    let row = &csv_rows(&String::from_utf8(out.stdout).unwrap())[0];
    let (dp, oracle, gap): (f64, f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap(), row[4].parse().unwrap());
    assert!(gap <= 1e-3 * (1.0 + oracle));
    assert!(((dp - oracle).abs() - gap).abs() < 1e-12);

    let null = shortfall(&["oracle", "--n", "3", "--payoff", "constant", "--x", "0", "--format", "csv"], dir.path());
    let row = &csv_rows(&String::from_utf8(null.stdout).unwrap())[0];
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);

    let refused = shortfall(&["oracle", "--n", "4"], dir.path());
    assert_eq!(refused.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("n <= 3"));
}

#[test]
fn converge_and_frontier_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = shortfall(&["converge", "--payoff", "constant", "--n-list", "1,2,4", "--format", "csv"], dir.path());
    assert!(out.status.success());
    let rows = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));

    let out = shortfall(
        &["frontier", "--payoff", "capped-call", "--cap", "0.05", "--n", "3", "--x-list", "0,0.01,0.03,0.05,0.2", "--format", "csv", "--out", "sub/curve.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&std::fs::read_to_string(dir.path().join("sub/curve.csv")).unwrap());
    let risk: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(risk.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    assert_eq!(*risk.last().unwrap(), 0.0);

    let unsorted = shortfall(&["frontier", "--x-list", "0.1,0.0"], dir.path());
    assert_eq!(unsorted.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn risk_exports_the_wealth_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = shortfall(&["risk", "--n", "3", "--x", "0.03", "--signs", "udd", "--path-out", "p.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(text.contains("# config={"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.03);
    assert_eq!(rows[3][3], "");

    let out = shortfall(&["risk", "--n", "2", "--x", "0.03", "--grid-u", "21", "--grid-v", "13", "--dump", "g.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dump = json_at(&dir.path().join("g.json"));
    assert_eq!(dump["format_version"], 1);
    let grids = dump["value_grids"].as_array().unwrap();
    assert_eq!(grids.len(), 3);
    let first = &grids[0];
    let (nu, nv) = (first["axes"]["u"].as_array().unwrap().len(), first["axes"]["v"].as_array().unwrap().len());
    assert_eq!(first["samples"].as_array().unwrap().len(), nu * nv);
}

#[test]
fn simulate_needs_a_seed_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let missing = shortfall(&["simulate", "--n", "2", "--n-list", "2"], dir.path());
    assert_eq!(missing.status.code(), Some(EXIT_CONFIG));
    let args = ["simulate", "--n", "3", "--n-list", "2,3", "--seed", "5", "--paths", "100", "--format", "csv"];
    let a = shortfall(&args, dir.path());
    let b = shortfall(&[&args[..], &["--threads", "2"]].concat(), dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("lift_violations,0.000000000000e0"));
    let strip = |t: &str| t.lines().filter(|l| !l.starts_with("# config")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&text), strip(&String::from_utf8(b.stdout).unwrap()));
}

#[test]
fn bad_parameters_and_escapes_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(shortfall(&["risk", "--sigma", "-1"], dir.path()).status.code(), Some(EXIT_CONFIG));
    assert_eq!(shortfall(&["risk", "--mu", "1.5"], dir.path()).status.code(), Some(EXIT_CONFIG));
    assert_eq!(shortfall(&["risk", "--bogus"], dir.path()).status.code(), Some(EXIT_CONFIG));
    assert_eq!(exit_code(&Error::GridEscape { k: 1, u: 0.0, v: 9.0 }), EXIT_GRID_ESCAPE);
}
