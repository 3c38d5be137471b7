use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsa")).args(args).env_remove("HSA_SEED").output().unwrap()
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_example_passes() {
    let out = hsa(&["verify-example"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("5 single-dropout decodes verified"));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], true);
}

fn perturbed(edit: impl FnOnce(&mut Value)) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let mut v: Value = serde_json::from_str(hsa_core::vectors::BUNDLED_EXAMPLE).unwrap();
    edit(&mut v);
    let path = dir.path().join("v.json");
    std::fs::write(&path, v.to_string()).unwrap();
    hsa(&["verify-example", "--vectors", path.to_str().unwrap()])
}

#[test]
fn perturbed_combination_names_c1() {
    let out = perturbed(|v| {
        let x = v["combos"][0]["matrix"][0][1].as_u64().unwrap();
        v["combos"][0]["matrix"][0][1] = ((x + 1) % 13).into();
    });
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch at C_1"));
}

#[test]
fn perturbed_generator_fails_verify_gs() {
    let out = perturbed(|v| {
        let x = v["G_S"][4][0].as_u64().unwrap();
        v["G_S"][4][0] = ((x + 1) % 13).into();
    });
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch at verify_gs"));
}

#[test]
fn run_with_relay_one_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.json");
    let out = hsa(&[
        "run",
        "--K",
        "5",
        "--d",
        "3",
        "--s",
        "1",
        "--q",
        "3",
        "--L",
        "2",
        "--drop",
        "fixed:r2s=1",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out_path);
    for key in ["config", "scheme", "episodes", "audit", "rates", "verdicts"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["episodes"][0]["status"], "decoded");
    assert_eq!(r["episodes"][0]["V2"], serde_json::json!([2, 3, 4, 5]));
    assert_eq!(r["rates"]["measured"]["R1"]["num"], 3);
    assert_eq!(r["rates"]["measured"]["R1"]["den"], 2);
    assert_eq!(r["scheme"]["generator_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_trials_report_construction_only() {
    let out = hsa(&["run", "--K", "5", "--d", "3", "--s", "1", "--q", "3", "--L", "2", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["episodes"], serde_json::json!([]));
    assert_eq!(r["scheme"]["G_S"].as_array().unwrap().len(), 5);
}

#[test]
fn exhaustive_sweep_decodes_and_audits_clean() {
    let out = hsa(&["sweep", "--K", "6", "--d", "4", "--s", "2", "--q", "3", "--L", "4", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let eps = r["episodes"].as_array().unwrap();
    assert_eq!(eps.len(), 64);
    for e in eps {
        let v2 = e["V2"].as_array().unwrap().len();
        assert_eq!(e["status"] == "decoded", v2 >= 4);
        assert_eq!(e["server_leakage"], 0);
    }
}

#[test]
fn env_seed_overrides_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_hsa"))
        .args(["run", "--K", "4", "--d", "2", "--s", "1", "--q", "3", "--L", "2", "--seed", "1", "--trials", "0"])
        .env("HSA_SEED", "77")
        .output()
        .unwrap();
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["config"]["seed"], 77);
}

#[test]
fn audit_small_instance_agrees() {
    let out = hsa(&["audit", "--K", "3", "--d", "2", "--s", "1", "--q", "2", "--p", "5", "--L", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["audit"]["brute_force"].as_array().unwrap().iter().all(|c| c["status"] == "agreement"));
}

#[test]
fn audit_example_marks_enumeration_skipped() {
    let out = hsa(&["audit", "--K", "5", "--d", "3", "--s", "1", "--q", "3", "--L", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["audit"]["brute_force"].as_array().unwrap().iter().all(|c| c["status"] == "skipped"));
    assert_eq!(r["audit"]["relay_leakage"], serde_json::json!([0, 0, 0, 0, 0]));
}

#[test]
fn unmask_hook_fails_audit() {
    let out =
        hsa(&["audit", "--K", "3", "--d", "2", "--s", "1", "--q", "2", "--p", "5", "--L", "1", "--unmask", "1,1"]);
    assert_eq!(out.status.code(), Some(1));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["audit"]["relay_leakage"][0].as_u64().unwrap() > 0);
}

#[test]
fn invalid_config_exits_2() {
    let out = hsa(&["run", "--K", "5", "--d", "5", "--s", "1", "--q", "3", "--L", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hsa(&["run", "--K", "5", "--d", "3", "--s", "1", "--q", "3", "--L", "2", "--drop", "sometimes"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hsa(&["run", "--d", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# worked example\nK = 5\nd = 3\ns = 1\nq = 3\nL = 2\ntrials = 0\n").unwrap();
    let out = hsa(&["run", "--config", cfg.to_str().unwrap(), "--L", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["config"]["L"], 4);
    assert_eq!(r["scheme"]["segments"], 2);
}

#[test]
fn construction_failure_exits_3() {
    // Over Z_5 every Vandermonde choice for K=4, d=2 makes the zero-sum row parallel to another row.
    let out = hsa(&["run", "--K", "4", "--d", "2", "--s", "1", "--q", "2", "--L", "2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("construction failed"));
}
