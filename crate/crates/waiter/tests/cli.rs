use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn waiter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waiter")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn largest_mu(report: &serde_json::Value) -> f64 {
    let groups = report["groups"].as_array().unwrap();
    groups
        .iter()
        .map(|g| g["mu"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn min_mu_reports_the_wedge_coefficient() {
    let out = waiter(&["min-mu", path(&scenario("wedge15.scn"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mu = largest_mu(&report);
    assert!((mu - 0.132).abs() <= 0.002, "{mu}");
}

#[test]
fn min_mu_of_a_flat_box_is_zero() {
    let out = waiter(&["min-mu", path(&scenario("box.scn"))]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mu = largest_mu(&report);
    assert!(mu.abs() <= 1e-6, "{mu}");
}

#[test]
fn malformed_file_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("box.scn")).unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(&bad, text.replace("[sim]\n", "[sim]\nfrobnicate = 3\n")).unwrap();
    let out = waiter(&["simulate", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frobnicate"));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let out = waiter(&["simulate", path(&scenario("box.scn")), "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sideways"));
}

#[test]
fn unconstrained_box_run_exits_with_drop() {
    let dir = tempfile::tempdir().unwrap();
    let out = waiter(&[
        "simulate",
        path(&scenario("box.scn")),
        "--mode",
        "none",
        "--duration",
        "4",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("box.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["dropped"], true);
}

#[test]
fn robust_box_run_succeeds_and_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = waiter(&[
            "simulate",
            path(&scenario("box.scn")),
            "--mode",
            "robust",
            "--seed",
            "5",
            "--out",
            path(dir.path()),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv = |d: &tempfile::TempDir| std::fs::read(d.path().join("box.csv")).unwrap();
    let (ca, cb) = (csv(&a), csv(&b));
    assert_eq!(ca, cb);
    let header = String::from_utf8_lossy(&ca).lines().next().unwrap().to_string();
    assert!(header.starts_with("t,q0,"));
    assert!(header.ends_with("tilt,goal_dist,fric_util,zmp_margin,min_coll_dist,compute_ms"));
    assert_eq!(header.split(',').count(), 1 + 36 + 3 + 6);
}
