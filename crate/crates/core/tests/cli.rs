use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use matrixrl::env::TaskFamily;
use matrixrl::report::read_regret_csv;

const SMOKE: &str = "n_states = 4
n_actions = 2
d = 5
d_prime = 4
r = 2
tasks = 3
horizon = 3
episodes = 1
seeds = [0]
coverage_runs = 100
coverage_episodes = 2
lemma_trials = 5
quadform_probes = 4
";

fn matrixrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matrixrl")).args(args).env("MATRIXRL_THREADS", "1").output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_config_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = matrixrl(&["run", "--config", "/nonexistent/config.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_episode_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = matrixrl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["regret.csv", "audits.json", "instance.json", "regret.svg", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let rows = read_regret_csv(&out.join("regret.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 5);
}

#[test]
fn overrides_select_algorithms_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = matrixrl(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "1,2", "--algorithms", "oracle"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = read_regret_csv(&out.join("regret.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    let bad = matrixrl(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--algorithms", "greedy"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn gen_rejects_rank_above_feature_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMOKE.replace("r = 2", "r = 6"));
    let out = dir.path().join("family.json");
    let o = matrixrl(&["gen", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn gen_writes_a_family_that_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("family.json");
    let o = matrixrl(&["gen", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for key in ["L_phi", "L_psi", "C_psi", "S ", "rank check"] {
        assert!(stdout.contains(key), "{key} not printed");
    }
    let text = fs::read_to_string(&out).unwrap();
    let fam = TaskFamily::from_json(&text).unwrap();
    assert_eq!(fam.to_json().unwrap() + "\n", text);
}

#[test]
fn audit_rejects_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMOKE.replace("lemma_trials = 5", "lemma_trials = 0"));
    let out = dir.path().join("out");
    let o = matrixrl(&["audit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn audit_writes_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = matrixrl(&["audit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let audits: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("audits.json")).unwrap()).unwrap();
    let checks = audits["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["property"] == "det_lemma"));
    assert!(checks.iter().any(|c| c["property"] == "coverage_shared"));
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMOKE.replace("episodes = 1", "episodes = 15"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(matrixrl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    }
    for f in ["regret.csv", "instance.json", "regret.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}
