use std::fs;
use std::process::Command;

use silt_core::harness::{run, validate, ExperimentConfig, RunError, RunOptions, RunStatus, Severity};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

const SCAN: &str = r#"
seed = 42
[law]
kind = "finite-range"
alpha = 2.0
dim = 1
[experiment]
kind = "eisenbaum"
sides = [3, 4]
lambdas = [0.5]
shifts = [0.5, 1.0]
functionals = ["exp-neg-sum", "cos-diff"]
replicas = 20000
"#;

#[test]
fn same_seed_gives_identical_csv() {
    let cfg = config(SCAN);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&cfg, a.path(), &RunOptions { workers: Some(1) }).unwrap();
    let rb = run(&cfg, b.path(), &RunOptions { workers: Some(3) }).unwrap();
    assert_eq!(ra.config_hash, rb.config_hash);
    let csv = |d: &std::path::Path| fs::read(d.join("results.csv")).unwrap();
    assert_eq!(csv(a.path()), csv(b.path()));
    let text = String::from_utf8(csv(a.path())).unwrap();
    assert!(text.starts_with("config_hash,task,"));
    assert!(text.lines().skip(1).all(|l| l.starts_with(&ra.config_hash)));

    let mut other = cfg.clone();
    other.seed = 43;
    let c = tempfile::tempdir().unwrap();
    run(&other, c.path(), &RunOptions::default()).unwrap();
    assert_ne!(csv(a.path()), csv(c.path()));
}

#[test]
fn empty_grid_is_refused_without_artifacts() {
    let cfg = config(&SCAN.replace("[3, 4]", "[]"));
    let diags = validate(&cfg);
    assert!(diags.iter().any(|d| d.severity == Severity::Error && d.message.contains("empty grid")));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    match run(&cfg, &out, &RunOptions::default()) {
        Err(RunError::Invalid(list)) => assert!(!list.is_empty()),
        other => panic!("expected refusal, got {other:?}"),
    }
    assert!(!out.exists());
}

#[test]
fn all_problems_are_listed_together() {
    let cfg = config(
        r#"
[law]
kind = "finite-range"
alpha = 2.0
dim = 1
[experiment]
kind = "eisenbaum"
sides = []
lambdas = [-1.0]
shifts = [1.0]
functionals = ["no-such-functional"]
replicas = 10
"#,
    );
    let errors = validate(&cfg).into_iter().filter(|d| d.severity == Severity::Error).count();
    assert!(errors >= 3, "got {errors}");
}

#[test]
fn fast_schedule_is_flagged() {
    let cfg = config(
        r#"
[law]
kind = "finite-range"
alpha = 2.0
dim = 1
[experiment]
kind = "exp-moment"
p = 2.0
thetas = [0.5]
horizons = [10000.0]
replicas = 10
rho = 2.2
beta = { type = "power", exponent = 0.6 }
"#,
    );
    let diags = validate(&cfg);
    assert!(
        diags.iter().any(|d| d.severity == Severity::Error && d.message.contains("beta^alpha << t")),
        "{diags:?}"
    );
    let ok = config(&cfg_text_with_exponent(0.3));
    assert!(validate(&ok).iter().all(|d| d.severity != Severity::Error));
}

fn cfg_text_with_exponent(e: f64) -> String {
    format!(
        r#"
[law]
kind = "finite-range"
alpha = 2.0
dim = 1
[experiment]
kind = "exp-moment"
p = 2.0
thetas = [0.5]
horizons = [10000.0]
replicas = 10
rho = 2.2
beta = {{ type = "power", exponent = {e} }}
"#
    )
}

fn constants(dim: usize, alpha: f64) -> ExperimentConfig {
    config(&format!(
        r#"
[experiment]
kind = "constants"
dim = {dim}
alphas = [{alpha:?}]
p = 2.0
"#
    ))
}

#[test]
fn constants_subcriticality() {
    assert!(validate(&constants(1, 2.0)).iter().all(|d| d.severity != Severity::Error));
    let critical = validate(&constants(2, 1.0));
    assert!(critical.iter().any(|d| d.severity == Severity::Error), "{critical:?}");
}

#[test]
fn unknown_fields_are_rejected() {
    assert!(ExperimentConfig::from_toml(&SCAN.replace("seed = 42", "seed = 42\nsed = 1")).is_err());
}

#[test]
fn hash_ignores_output_location() {
    let a = config(SCAN);
    let mut b = a.clone();
    b.output = Some("elsewhere".into());
    assert_eq!(a.hash(), b.hash());
    let mut c = a.clone();
    c.seed += 1;
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn constants_run_writes_registry() {
    let cfg = config(
        r#"
[experiment]
kind = "constants"
dim = 1
alphas = [2.0]
p = 2.0
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let report = run(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(report.status, RunStatus::Completed);
    let reg = silt_core::variational::ConstantsRegistry::load(&dir.path().join("constants.json")).unwrap();
    assert_eq!(reg.config_hash.as_deref(), Some(report.config_hash.as_str()));
    let rec = reg.lookup(1, 2.0, 2.0, 1.0).expect("record for alpha = 2");
    assert!(rec.rho > 0.0 && rec.chi > 0.0);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], report.config_hash);
    let listed = manifest["artifacts"].as_array().unwrap();
    assert!(listed.iter().any(|a| a["path"] == "constants.json"));
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_silt");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SCAN.replace("[3, 4]", "[]")).unwrap();
    let st = Command::new(bin).args(["validate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stdout).contains("empty grid"));

    let st = Command::new(bin).args(["run", "--config"]).arg(&bad).arg("--out").arg(dir.path().join("x")).status().unwrap();
    assert_eq!(st.code(), Some(2));
    assert!(!dir.path().join("x").exists());

    let good = dir.path().join("good.toml");
    fs::write(&good, SCAN).unwrap();
    let out = dir.path().join("run");
    let st = Command::new(bin)
        .args(["run", "--workers", "2", "--seed", "5", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(out.join("results.csv").exists() && out.join("results.json").exists());

    let suite = dir.path().join("suite");
    let o = Command::new(bin).args(["suite", "--only", "1,3", "--out"]).arg(&suite).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 2);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(suite.join("suite.json")).unwrap()).unwrap();
    assert_eq!(doc["outcomes"].as_array().unwrap().len(), 2);
    assert!(doc["config_hash"].as_str().is_some());
}
