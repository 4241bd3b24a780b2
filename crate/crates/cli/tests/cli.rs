use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn confweld(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_confweld"))
        .args(args)
        .current_dir(dir)
        .env_remove("CONFWELD_SEED")
        .output()
        .expect("binary runs")
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn weld_beta_zero_is_the_circle() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(
        &["weld", "--beta", "0", "--seed", "1", "--grid", "128", "--out", "w"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for row in csv_rows(&dir.path().join("w/curve.csv")) {
        let (x, y): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        assert!((x.hypot(y) - 1.0).abs() < 1e-2);
    }
    let m = manifest(&dir.path().join("w/weld.manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["seed"], 1);
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(outputs.contains(&"curve.csv") && outputs.contains(&"curve.svg"));
    assert!(m["results"]["welding_defect"].as_f64().unwrap() < 1e-3);
}

#[test]
fn weld_reports_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(
        &[
            "weld", "--beta", "0.7", "--seed", "3", "--grid", "1024", "--eps", "0.05", "--out", "w",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&dir.path().join("w/weld.manifest.json"));
    let diag = &m["results"]["weld"]["diagnostics"];
    assert!(diag["conformality"]["median"].as_f64().unwrap() <= 1e-2);
    assert!(diag["solve"]["fixed_point_residual"].is_number());
    assert!(m["results"]["welding_defect"].is_number());
}

#[test]
fn supercritical_beta_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(&["weld", "--beta", "1.6"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta^2 >= 2"));
}

#[test]
fn flagged_weld_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(
        &[
            "weld",
            "--beta",
            "1",
            "--seed",
            "0",
            "--grid",
            "128",
            "--mollify",
            "0",
            "--verify",
            "false",
            "--out",
            "w",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let m = manifest(&dir.path().join("w/weld.manifest.json"));
    assert_eq!(m["status"], "flagged");
    assert!(!m["results"]["weld"]["flags"].as_array().unwrap().is_empty());
}

#[test]
fn tail_requires_delta() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(&["tail", "--beta", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--delta"));
}

#[test]
fn tail_beta_zero_never_hits() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(
        &[
            "tail",
            "--beta",
            "0",
            "--p",
            "1",
            "--delta",
            "0.05",
            "--n-values",
            "2,3",
            "--samples",
            "1000",
            "--lk-samples",
            "200",
            "--k-max",
            "2",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("t/tail.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[1] == "0" && r[3].parse::<f64>().unwrap() == 0.0));
    let m = manifest(&dir.path().join("t/tail.manifest.json"));
    assert!(m["results"]["lk"]["correlation"][0][1].as_f64().unwrap() == 0.0);
}

#[test]
fn tail_beta_one_has_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(
        &[
            "tail",
            "--beta",
            "1",
            "--p",
            "1",
            "--delta",
            "0.1",
            "--n-values",
            "2,3,4",
            "--samples",
            "1000",
            "--lk-samples",
            "0",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&dir.path().join("t/tail.manifest.json"));
    assert!(m["results"]["fitted_slope"].is_number(), "{}", m["results"]);
}

#[test]
fn covariance_study_brackets_log_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(
        &[
            "stats",
            "--study",
            "covariance",
            "--modes",
            "1024",
            "--samples",
            "400",
            "--lags",
            "0.5",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let row = &csv_rows(&dir.path().join("s/covariance.csv"))[0];
    let est: f64 = row[2].parse().unwrap();
    assert!((est + 2f64.ln()).abs() < 0.03, "{est}");
    let (lo, hi): (f64, f64) = (row[4].parse().unwrap(), row[5].parse().unwrap());
    assert!(lo < est && est < hi);
}

#[test]
fn moment_study_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(
        &[
            "stats",
            "--study",
            "moment",
            "--beta",
            "0.7",
            "--q",
            "2",
            "--chaos-grid",
            "8192",
            "--levels",
            "3,4,5,6,7,8",
            "--samples",
            "500",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&dir.path().join("s/stats.manifest.json"));
    let slope = m["results"]["exponent"].as_f64().unwrap();
    assert!((slope - 1.51).abs() < 0.15, "{slope}");
    assert!((m["results"]["oracle_slope"].as_f64().unwrap() - 1.51).abs() < 0.03);
}

#[test]
fn infinite_moment_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(&["stats", "--study", "moment", "--beta", "1", "--q", "2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("finite moments only for q < 2/beta^2"));
}

#[test]
fn manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = confweld(
        &[
            "weld", "--beta", "0.5", "--seed", "7", "--grid", "128", "--verify", "false", "--out", "a",
        ],
        dir.path(),
    );
    assert_eq!(first.status.code(), Some(0));
    let again = confweld(&["weld", "--config", "a/weld.manifest.json", "--out", "b"], dir.path());
    assert_eq!(
        again.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&again.stderr)
    );
    for f in ["curve.csv", "homeo.csv", "solver_history.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn config_file_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "beta = 0.3\nseed = 5\nchaos-grid = 1024\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_confweld"))
        .args(["gmc", "--config", "run.cfg", "--out", "g"])
        .current_dir(dir.path())
        .env("CONFWELD_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&dir.path().join("g/gmc.manifest.json"));
    assert_eq!(m["config"]["beta"], 0.3);
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(csv_rows(&dir.path().join("g/measure.csv")).len(), 1024);

    std::fs::write(dir.path().join("bad.cfg"), "betta = 0.3\n").unwrap();
    let bad = confweld(&["gmc", "--config", "bad.cfg"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn lehto_decomposition_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(
        &["lehto", "--beta", "0.5", "--p", "2", "--n", "3", "--out", "l"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_rows(&dir.path().join("l/lehto.csv")).len(), 3);
    let m = manifest(&dir.path().join("l/lehto.manifest.json"));
    assert_eq!(m["results"]["superadditive"], true);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = confweld(&["selftest"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
