//! End-to-end tests of the `blowup-lab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blowup-lab"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join("reference.json")).unwrap())
            .unwrap();
    edit(&mut v);
    let path = dir.join("cfg.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn ode_prints_closed_form_t1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "ode",
        configs().join("reference.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("T1 (closed form) = 0.223144"),
        "{}",
        stdout(&o)
    );
    assert_eq!(manifest(dir.path())["checks"]["ode_t1"], "pass");
}

#[test]
fn assumptions_reports_a5_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "assumptions",
        configs().join("reference.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("A5: infeasible for all ε₁"));
    let files: Vec<String> = manifest(dir.path())["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(files, ["assumptions.json"]);
}

#[test]
fn condgam_failure_aborts_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| {
        v["problem"]["gamma1"] = 3.5.into();
        v["problem"]["gamma2"] = 3.5.into();
        v["data"]["f"] = "3.5".into();
        v["data"]["g"] = "3.5".into();
    });
    let out = dir.path().join("out");
    let o = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(4));
    let m = manifest(&out);
    assert_eq!(m["status"], "aborted");
    assert!(m["errors"][0].as_str().unwrap().contains("margin -1"));
    assert!(!out.join("field.csv").exists());
}

#[test]
fn invalid_config_still_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| {
        v["data"]["u1"] = "1".into();
    });
    let out = dir.path().join("out");
    let o = run(&[
        "solve",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(manifest(&out)["status"], "aborted");
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = run(&["explode", "cfg.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn run_bundle_matches_manifest_digests() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        configs().join("reference.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
    let m = manifest(dir.path());
    assert_eq!(m["status"], "ok");
    let files = m["files"].as_array().unwrap();
    for f in files {
        let name = f["name"].as_str().unwrap();
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(
            hex::encode(Sha256::digest(&bytes)),
            f["sha256"].as_str().unwrap(),
            "{name}"
        );
        assert_eq!(bytes.len() as u64, f["bytes"].as_u64().unwrap());
        if name.ends_with(".csv") {
            let text = String::from_utf8(bytes).unwrap();
            let first = text.lines().next().unwrap().split(',').next().unwrap();
            assert!(first.parse::<f64>().is_err(), "{name} lacks a header");
        }
    }
    for name in [
        "field.csv",
        "curve.csv",
        "rates.json",
        "violations.csv",
        "profile.csv",
        "profile.json",
    ] {
        assert!(files.iter().any(|f| f["name"] == name), "missing {name}");
    }
}

#[test]
fn emit_flags_gate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| {
        v["outputs"]["emit_field"] = false.into();
        v["outputs"]["emit_rates"] = false.into();
        v["outputs"]["emit_profile"] = Value::Null;
        v["numerics"]["picard_iterations"] = 0.into();
    });
    let out = dir.path().join("out");
    assert!(run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet"
    ])
    .status
    .success());
    let names: Vec<String> = manifest(&out)["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(
        names,
        [
            "assumptions.json",
            "solve_summary.json",
            "curve.csv",
            "curve_diagnostics.json"
        ]
    );
}

#[test]
fn later_stages_reuse_the_solved_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("bump.json");
    let staged = dir.path().join("staged");
    let fresh = dir.path().join("fresh");
    assert!(run(&[
        "solve",
        cfg.to_str().unwrap(),
        "--out",
        staged.to_str().unwrap(),
        "--quiet"
    ])
    .status
    .success());
    let o = run(&[
        "curve",
        cfg.to_str().unwrap(),
        "--out",
        staged.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("reusing field.csv"));
    assert!(run(&[
        "curve",
        cfg.to_str().unwrap(),
        "--out",
        fresh.to_str().unwrap(),
        "--quiet"
    ])
    .status
    .success());
    assert_eq!(
        std::fs::read(staged.join("curve.csv")).unwrap(),
        std::fs::read(fresh.join("curve.csv")).unwrap()
    );

    // a changed config must not pick up the stale field
    let other = write_config(dir.path(), |v| v["numerics"]["h"] = 0.002.into());
    let o = run(&[
        "curve",
        other.to_str().unwrap(),
        "--out",
        staged.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(!stdout(&o).contains("reusing"));
}

#[test]
fn seed_changes_probes_but_not_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("bump.json");
    let digests = |seed: &str| {
        let out = dir.path().join(seed);
        assert!(run(&[
            "curve",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--quiet",
            "--seed",
            seed
        ])
        .status
        .success());
        let m = manifest(&out);
        let get = |name: &str| {
            m["files"]
                .as_array()
                .unwrap()
                .iter()
                .find(|f| f["name"] == name)
                .unwrap()["sha256"]
                .clone()
        };
        (
            get("field.csv"),
            get("curve.csv"),
            get("curve_diagnostics.json"),
        )
    };
    let a = digests("1");
    let b = digests("2");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_ne!(a.2, b.2);
}

#[test]
fn convergence_subcommand_writes_study() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "convergence",
        configs().join("reference.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("convergence.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["order_status"], "pass");
    assert_eq!(v["study"]["hs"].as_array().unwrap().len(), 3);
}
