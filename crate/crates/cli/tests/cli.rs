use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use netjump::designer::{read_schedule, write_schedule};
use netjump::experiment::SEC5_EXAMPLE;
use serde_json::Value;

fn netjump(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netjump")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = netjump(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn failure(args: &[&str]) -> Value {
    let out = netjump(args);
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    serde_json::from_slice(&out.stderr).unwrap()
}

/// The bundled configuration with cheaper Monte-Carlo settings.
fn small_config(dir: &Path) -> String {
    let text = SEC5_EXAMPLE
        .replace("kalman_runs = 2000", "kalman_runs = 100")
        .replace("horizon = 500", "horizon = 300")
        .replace("runs = 200", "runs = 20");
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn validate_chain_reports_reference_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let status = ok(&["validate-chain", "--out", &out]);
    assert_eq!(status["status"], "ok");
    let chain = &status["chain"];
    assert_eq!(chain["states"], 36);
    assert_eq!(chain["patterns"], 16);
    assert!(chain["row_sum_error"].as_f64().unwrap() < 1e-12);
    assert!(chain["stationary_residual"].as_f64().unwrap() < 1e-12);
    let gains: Vec<u64> = chain["gains"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["num_gains"].as_u64().unwrap())
        .collect();
    assert_eq!(gains, [1, 2, 4, 15, 32]);

    let dump = String::from_utf8(read(dir.path(), "chain.csv")).unwrap();
    let blocks: Vec<&str> = dump.split("\n\n").filter(|b| !b.trim().is_empty()).collect();
    assert_eq!(blocks.len(), 3);
}

#[test]
fn design_is_reproducible_and_schedules_round_trip() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        ok(&["design", "--rho", "0,0.5", "--strategy", "S1,S4", "--out", &dir.path().display().to_string()]);
    }
    let mut names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "design.csv",
            "schedule_S1_rho0.5.txt",
            "schedule_S1_rho0.txt",
            "schedule_S4_rho0.5.txt",
            "schedule_S4_rho0.txt"
        ]
    );
    for name in &names {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let text = String::from_utf8(read(a.path(), "schedule_S4_rho0.5.txt")).unwrap();
    let schedule = read_schedule(&text, "schedule").unwrap();
    assert_eq!(write_schedule(&schedule), text);
}

#[test]
fn simulate_is_reproducible_with_expected_columns() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = small_config(a.path());
    for dir in [&a, &b] {
        let out = dir.path().join("sim").display().to_string();
        ok(&["simulate", "--config", &config, "--strategy", "S3", "--rho", "0.25", "--seed", "9", "--out", &out]);
    }
    for name in ["sim/trajectory.csv", "sim/statistics.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let traj = String::from_utf8(read(a.path(), "sim/trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,theta_index,x_true_0,x_true_1,x_true_2,x_true_3,x_est_0,x_est_1,x_est_2,x_est_3,err_0,err_1,err_2,err_3"
    );
    assert_eq!(lines.count(), 300);

    // another seed gives another trajectory
    let c = tempfile::tempdir().unwrap();
    let out = c.path().display().to_string();
    ok(&["simulate", "--config", &config, "--strategy", "S3", "--rho", "0.25", "--seed", "10", "--out", &out]);
    assert_ne!(read(a.path(), "sim/trajectory.csv"), read(c.path(), "trajectory.csv"));
}

#[test]
fn simulate_accepts_a_saved_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let config = small_config(dir.path());
    ok(&["design", "--strategy", "S2", "--rho", "0", "--out", &out]);
    let schedule = dir.path().join("schedule_S2_rho0.txt").display().to_string();
    let sim = dir.path().join("sim").display().to_string();
    ok(&["simulate", "--config", &config, "--schedule", &schedule, "--rho", "0", "--out", &sim]);
    let stats = String::from_utf8(read(dir.path(), "sim/statistics.csv")).unwrap();
    assert!(stats.starts_with("theta_index,count,pi,pi_hat,trace_empirical,trace_designed\n"));
    assert_eq!(stats.lines().count(), 1 + 36 + 1);
}

#[test]
fn sweep_is_reproducible_and_custom_groupings_work() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = small_config(a.path());
    // one shared gain; states without receptions fall back to the zero gain
    let grouping = format!("grouping{}\n", " 0".repeat(36));
    fs::write(a.path().join("one.txt"), grouping).unwrap();
    let custom = format!("custom:{}", a.path().join("one.txt").display());

    for dir in [&a, &b] {
        let out = dir.path().join("sweep").display().to_string();
        ok(&["sweep", "--config", &config, "--rho", "0:0.25:0.5", "--strategy", &format!("S1,S5,{custom}"), "--out", &out]);
    }
    let csv = read(a.path(), "sweep/sweep.csv");
    assert_eq!(csv, read(b.path(), "sweep/sweep.csv"));
    let csv = String::from_utf8(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "rho,strategy,num_gains,objective,epsilon,flops_jump,flops_kalman,verdicts");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    for rho in rows.chunks(3) {
        let (s1, custom) = (&rho[0], &rho[2]);
        assert_eq!(s1[1], "S1");
        assert!(custom[1].starts_with("custom:"));
        assert_eq!(custom[2], "1");
        let (o1, oc): (f64, f64) = (s1[3].parse().unwrap(), custom[3].parse().unwrap());
        assert!((o1 - oc).abs() <= 1e-8 * o1, "{o1} vs {oc}");
    }
    assert!(fs::metadata(a.path().join("sweep/summary.txt")).unwrap().len() > 0);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SEC5_EXAMPLE.replace("[output]", "[output]\ncolour = \"red\"")).unwrap();
    let err = failure(&["design", "--config", &bad.display().to_string(), "--out", &out]);
    assert_eq!(err["error"]["kind"], "parse");
    let message = err["error"]["message"].as_str().unwrap();
    assert!(message.contains("colour") && message.contains("line"), "{message}");

    let err = failure(&["design", "--strategy", "S9", "--out", &out]);
    assert_eq!(err["error"]["kind"], "unknown_strategy");

    let err = failure(&["design", "--config", "/nonexistent/config.toml"]);
    assert_eq!(err["error"]["kind"], "io");

    let err = failure(&["sweep", "--rho", "0.1:-1:0.5", "--out", &out]);
    assert_eq!(err["error"]["kind"], "config");

    let err = failure(&["evaluate", "--runs", "1", "--out", &out]);
    assert_eq!(err["error"]["kind"], "config");

    let err = failure(&["frobnicate"]);
    assert_eq!(err["error"]["kind"], "usage");
}
