use std::process::Command;

use rgiv::io::{write_panel, LabeledPanel};
use rgiv::prelude::*;

fn rgiv() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rgiv"));
    cmd.env("RGIV_WORKERS", "2");
    cmd
}

fn fixture(dir: &std::path::Path) -> (String, String) {
    let spec = DgpSpec { periods: 600, ..builtin_scenario("coef_outlier").unwrap() };
    let panel = generate_panel(&spec, 0).unwrap();
    let labeled = LabeledPanel { units: (1..=11).map(|i| format!("c{i}")).collect(), panel };
    let (data, sizes) = (dir.join("r.csv"), dir.join("s.csv"));
    write_panel(&labeled, &data, &sizes).unwrap();
    (data.display().to_string(), sizes.display().to_string())
}

#[test]
fn estimate_prints_json_with_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let (data, sizes) = fixture(dir.path());
    let out = rgiv().args(["estimate", "--data", &data, "--sizes", &sizes]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["method"], "rgiv");
    assert_eq!(v["phi_hat"].as_array().unwrap().len(), 11);
    assert_eq!(v["intervals"].as_array().unwrap().len(), 13);

    let giv = rgiv()
        .args(["estimate", "--data", &data, "--sizes", &sizes, "--method", "giv-feasible", "--level", "0.9"])
        .output()
        .unwrap();
    assert!(giv.status.success());
}

#[test]
fn test_subcommand_reports_dof() {
    let dir = tempfile::tempdir().unwrap();
    let (data, sizes) = fixture(dir.path());
    for (which, dof) in [("j", 44), ("homogeneity", 10)] {
        let out = rgiv().args(["test", "--data", &data, "--sizes", &sizes, "--which", which]).output().unwrap();
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["dof"], dof);
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let bad_sizes = dir.path().join("bad.csv");
    std::fs::write(&bad_sizes, (1..=11).map(|i| format!("c{i},0.1\n")).collect::<String>()).unwrap();
    let bad = bad_sizes.display().to_string();

    let code = |args: &[&str]| rgiv().args(args).output().unwrap().status.code();
    assert_eq!(code(&["estimate", "--data", &data, "--sizes", &bad]), Some(2));
    assert_eq!(code(&["estimate", "--data", &data, "--sizes", &bad, "--normalize-sizes"]), Some(0));
    assert_eq!(code(&["estimate", "--data", "/no/such/file.csv", "--sizes", &bad]), Some(4));
    assert_eq!(code(&["simulate", "--scenario", "unknown", "--reps", "1"]), Some(2));
    assert_eq!(code(&["simulate", "--reps", "1"]), Some(2));

    // equal sizes leave the GIV instrument identically zero
    let equal = dir.path().join("equal.csv");
    std::fs::write(&equal, (1..=11).map(|i| format!("c{i},{}\n", 1.0 / 11.0)).collect::<String>()).unwrap();
    let equal = equal.display().to_string();
    assert_eq!(code(&["estimate", "--data", &data, "--sizes", &equal, "--method", "giv-equal"]), Some(3));
}

#[test]
fn simulate_records_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "name = \"small\"\nperiods = 300\nphi = [0.3, 0.3, 0.3, 0.3]\nsigma = [1.0, 1.0, 1.0, 1.0]\nseed = 1\n\
         [size_rule]\nkind = \"power_law\"\nzeta = 1.04\n[shock_dist]\nkind = \"student_t\"\ndof = 8.0\n",
    )
    .unwrap();
    let spec = spec.display().to_string();
    let run = |workers: &str, out: &str| {
        let path = dir.path().join(out);
        let status = rgiv()
            .env("RGIV_WORKERS", workers)
            .args(["simulate", "--spec", &spec, "--reps", "6", "--seed", "9", "--format", "records", "--output"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(path).unwrap()
    };
    let a = run("1", "a.jsonl");
    let b = run("3", "b.jsonl");
    assert_eq!(a, b);
    let report = rgiv::io::parse_records(&a).unwrap();
    assert_eq!(report.spec.seed, 9);
    assert_eq!(report.records.len(), 6);
}
