use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_asap");

fn asap(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn suite(dir: &Path) {
    let out = asap(
        &["suite", "--name", "aligned", "--dim", "8", "--arms", "8", "--cos", "0.9", "--seed", "3", "--aligned-index", "3", "--emit", "suite.toml"],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn suite_emits_config_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let cfg = asap::config::load_config(&dir.path().join("suite.toml")).unwrap();
    assert_eq!(cfg.environment.as_ref().unwrap().auxiliaries.len(), 8);
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("suite.certificate.json")).unwrap()).unwrap();
    let cosines: Vec<f64> = serde_json::from_value(cert["cosines"].clone()).unwrap();
    assert!((cosines[3] - 0.9).abs() < 1e-6);
    assert!(cosines.iter().enumerate().all(|(a, &c)| a == 3 || c <= 0.0));
}

#[test]
fn run_is_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    for out in ["a", "b"] {
        let o = asap(&["run", "--config", "suite.toml", "--out", out, "--seed", "9"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["ucb.csv", "ucb.init.csv", "ucb.meta.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let o = asap(&["replay", "--trace", "a/ucb.csv"], dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("replay ok: 500 turns"));
}

#[test]
fn replay_names_the_tampered_turn() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    assert!(asap(&["run", "--config", "suite.toml", "--out", "t"], dir.path()).status.success());
    let path = dir.path().join("t/ucb.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[42].split(',').map(str::to_string).collect();
    let sel: usize = fields[1].parse().unwrap();
    fields[1] = ((sel + 3) % 8).to_string();
    lines[42] = fields.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = asap(&["replay", "--trace", "t/ucb.csv"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("turn 42"));
}

#[test]
fn baselines_write_named_traces() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    for policy in ["uniform_random", "round_robin", "fixed_best_initial", "all_mixed"] {
        let o = asap(&["baseline", "--config", "suite.toml", "--policy", policy, "--out", "b"], dir.path());
        assert!(o.status.success(), "{policy}");
        assert!(String::from_utf8_lossy(&o.stdout).contains(&format!("policy: {policy}")));
        assert!(dir.path().join(format!("b/{policy}.csv")).exists());
    }
    let o = asap(&["baseline", "--config", "suite.toml", "--policy", "greedy"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn config_errors_exit_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "schema_version = 1\n[run]\nhorizon = 10\nbeta = 2.0\n").unwrap();
    let o = asap(&["run", "--config", "bad.toml", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml"));
    fs::write(dir.path().join("ext.toml"), "schema_version = 1\n[run]\nhorizon = 10\n").unwrap();
    let o = asap(&["run", "--config", "ext.toml", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_is_reported_with_turn_and_arm() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let text = fs::read_to_string(dir.path().join("suite.toml")).unwrap();
    fs::write(dir.path().join("hot.toml"), text.replace("learning_rate = 0.05", "learning_rate = 50.0")).unwrap();
    let o = asap(&["run", "--config", "hot.toml", "--out", "h"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("divergence at turn"), "{stderr}");
}

#[test]
fn divergence_leaves_a_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let text = fs::read_to_string(dir.path().join("suite.toml")).unwrap();
    fs::write(dir.path().join("hot.toml"), text.replace("learning_rate = 0.05", "learning_rate = 50.0")).unwrap();
    asap(&["run", "--config", "hot.toml", "--out", "h"], dir.path());
    let meta = fs::read_to_string(dir.path().join("h/ucb.meta.json")).unwrap();
    assert!(meta.contains("\"complete\": false") || meta.contains("\"complete\":false"), "{meta}");
}
