//! End-to-end tests of the binary: artifact layout, exit-code contract,
//! and bit-identical outputs across repeated runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> PathBuf {
    let mut p = PathBuf::from(env!("CARGO_BIN_EXE_fuyau-lab"));
    assert!(p.exists(), "binary not built at {}", p.display());
    p = p.canonicalize().unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const TRIVIAL: &str = r#"
scenario = "trivial"
n = 2
N = 8
alpha = -1.0
A = 0.05
norm = "L1"
seed = 7

[metric]
type = "flat"
"#;

#[test]
fn solve_trivial_scenario_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", TRIVIAL);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["phi.fyfd", "trace.csv", "report.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    // phi is the constant -log A
    let bytes = std::fs::read(out_dir.join("phi.fyfd")).unwrap();
    let loaded = fuyau_core::io::load(&mut bytes.as_slice()).unwrap();
    match loaded.field {
        fuyau_core::io::LoadedField::Scalar(phi) => {
            let expect = -(0.05f64).ln();
            for v in &phi.data {
                assert!((v - expect).abs() < 1e-9);
            }
        }
        _ => panic!("expected a scalar dump"),
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", TRIVIAL);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for f in ["phi.fyfd", "trace.csv", "report.json"] {
        let a = std::fs::read(out_a.join(f)).unwrap();
        let b = std::fs::read(out_b.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
}

#[test]
fn unknown_config_key_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        &format!("{TRIVIAL}\nnot_a_real_key = 1\n"),
    );
    let out = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn uniqueness_refuses_positive_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "pos.toml",
        &TRIVIAL.replace("alpha = -1.0", "alpha = 1.0"),
    );
    let out = run(&[
        "uniqueness",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn huge_a_fails_structurally_with_last_good_state() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
scenario = "huge-A"
n = 2
N = 8
alpha = -1.0
A = 10.0
norm = "L1"
seed = 7

[metric]
type = "flat"

[[rho]]
i = 1
j = 1
k = [0, 0, 1, 0]
re = 0.05

[[mu]]
k = [1, 0, 0, 0]
c = 0.1
"#;
    let cfg = write_config(dir.path(), "huge.toml", body);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5), "expected step underflow");
    // the last good state is still written
    assert!(out_dir.join("phi.fyfd").exists());
    assert!(out_dir.join("report.json").exists());
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("underflow"), "report: {report}");
}

#[test]
fn monotonicity_trivial_gap_is_log2() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{TRIVIAL}\n[experiment]\na_list = [0.05, 0.1]\n"
    );
    let cfg = write_config(dir.path(), "mono.toml", &body);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "monotonicity",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    let gap = report["min_gaps"][0].as_f64().unwrap();
    assert!((gap - 2.0f64.ln()).abs() < 1e-9, "gap = {gap}");
}

#[test]
fn validate_geometry_reports_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", TRIVIAL);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "validate-geometry",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("geometry.json")).unwrap())
            .unwrap();
    assert_eq!(report["kaehler"], serde_json::Value::Bool(true));
    assert!((report["volume"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn check_with_mutated_assembly_fails_with_exit_6() {
    let dir = tempfile::tempdir().unwrap();
    // coarse grids keep the suite quick; the mutation must still trip the
    // equivalence check
    let body = TRIVIAL.replace("N = 8", "N = 8");
    let cfg = write_config(dir.path(), "check.toml", &body);
    let out = run(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
        "--mutate",
        "f-torsion-sign",
    ]);
    assert_eq!(out.status.code(), Some(6), "mutated run must fail");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("FAIL"),
        "table should show the failing rows:\n{stdout}"
    );
}
