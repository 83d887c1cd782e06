use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tikhonov-gamma"))
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg("--config").arg(config).args(extra).output().unwrap()
}

#[test]
fn fem_rate_writes_slope_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "fem.cfg", "[study]\nkind = fem-rate\n");
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("study,level,metric,value,verdict,wall_time_ms"));
    assert!(text.lines().any(|l| l.starts_with("fem-rate,,slope,") && l.ends_with(",pass,0")));
    let levels: Vec<&str> = text
        .lines()
        .filter(|l| l.contains(",l2_error,"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(levels, ["7", "15", "31", "63", "127"]);
}

#[test]
fn validate_reports_every_error() {
    let dir = TempDir::new().unwrap();
    let good = write_config(&dir, "good.cfg", "[study]\nkind = inf-study\n");
    let out = bin().args(["validate", "--config"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));

    let bad = write_config(
        &dir,
        "bad.cfg",
        "[study]\nkind = fem-rate\n[schedule]\nlevels = 31,15\n[problem]\nkernel = foo\n",
    );
    let out = bin().args(["validate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 4: levels must be strictly increasing"), "{err}");
    assert!(err.contains("line 6:") && err.contains("gaussian(sigma)"), "{err}");
}

#[test]
fn refused_study_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "az.cfg",
        "[study]\nkind = alpha-zero\n[problem]\noperator = exact\nreference_m = 33\n[schedule]\nlevels = 8,16,32\nalpha = power(1, 4)\n",
    );
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(",ratio_condition,0e0,refused,"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("does not vanish"));
}

#[test]
fn coercivity_refuses_vanishing_alpha() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "co.cfg",
        "[study]\nkind = coercivity\nsamples = 10\n[problem]\nreference_m = 65\n[schedule]\nalpha = power(1, 1)\n",
    );
    assert_eq!(run(&cfg, &[]).status.code(), Some(3));
}

#[test]
fn failing_verdict_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "fem.cfg", "[study]\nkind = fem-rate\nslope_min = -1.5\nslope_max = -1.0\n");
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stdout).unwrap().contains(",slope,"));
}

#[test]
fn exact_inf_study_has_zero_gaps() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "inf.cfg",
        "[study]\nkind = inf-study\n[problem]\noperator = exact\nreference_m = 65\n[schedule]\nlevels = 1,2,3,4\nalpha = constant(0.1)\nnoise = none\n",
    );
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let gaps: Vec<&str> = text.lines().filter(|l| l.contains(",gap,")).collect();
    assert_eq!(gaps.len(), 4);
    assert!(gaps.iter().all(|l| l.contains(",0e0,")));
}

#[test]
fn out_flag_overrides_config_path_and_output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let elsewhere = dir.path().join("from-config.csv");
    let cfg = write_config(
        &dir,
        "demo.cfg",
        &format!(
            "[study]\nkind = integral-demo\n[problem]\nreference_m = 129\n[schedule]\nnoise = random(0.5, 1)\n[output]\npath = {}\n",
            elsewhere.display()
        ),
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(run(&cfg, &["--out", a.to_str().unwrap(), "--seed", "5"]).status.code(), Some(0));
    assert_eq!(run(&cfg, &["--out", b.to_str().unwrap(), "--seed", "5"]).status.code(), Some(0));
    assert!(!elsewhere.exists());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    assert_eq!(run(&cfg, &["--seed", "6"]).status.code(), Some(0));
    assert_ne!(fs::read(&a).unwrap(), fs::read(&elsewhere).unwrap());
}

#[test]
fn json_lines_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "fem.cfg", "[study]\nkind = fem-rate\n[output]\nformat = json-lines\n");
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0]["study"], "fem-rate");
    assert_eq!(rows[0]["level"], 7);
    assert!(rows.iter().all(|r| r["wall_time_ms"] == 0));
}

#[test]
fn io_failures_exit_4() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.cfg");
    assert_eq!(run(&missing, &[]).status.code(), Some(4));

    let cfg = write_config(&dir, "fem.cfg", "[study]\nkind = fem-rate\n");
    let unwritable = dir.path().join("no-such-dir").join("out.csv");
    let out = run(&cfg, &["--out", unwritable.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8(out.stderr).unwrap().contains("cannot write report"));
}

#[test]
fn gamma_estimate_with_expected_value() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "g.cfg",
        "[study]\nkind = gamma-estimate\nexpected = -1\npoints = 1, 2.5\nwindow = 256\ngrid_nodes = 2048\n",
    );
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",gamma_lower,") && l.contains(",pass,")).count(), 2);
}

#[test]
fn eps_chain_reports_cluster() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "e.cfg",
        "[study]\nkind = eps-chain\nchain_mode = early-stop\ncauchy_tol = 1\nvalue_tol = 1\n[problem]\nreference_m = 129\n",
    );
    let out = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("eps-chain,,limit_gap,"));
    assert_eq!(text.lines().filter(|l| l.contains(",certified,1e0,pass,")).count(), 4);
}
