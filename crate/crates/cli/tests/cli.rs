use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gibbsnet");

const SMOKE: &str = r#"
task = "regression"
n_grid = [32, 48]
replicates = 2
mc_n = 1000
risk_draws = 10

[target]
id = "poly_smooth"
scale = 0.8

[sampler]
burn_in = 100
n_samples = 10
thinning = 2
n_chains = 2
"#;

fn gibbsnet(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(cwd).args(args).output().expect("binary runs")
}

fn write_plan(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn verify_lemmas_passes_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = gibbsnet(dir.path(), &["verify-lemmas", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("o/lemmas.json")).unwrap()).unwrap();
    let checks = report.as_array().unwrap();
    assert!(checks.len() >= 9);
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert!(String::from_utf8_lossy(&out.stdout).contains("lemmas.json"));
}

#[test]
fn missing_config_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gibbsnet(dir.path(), &["sweep"]).status.code(), Some(1));
    assert_eq!(gibbsnet(dir.path(), &["sweep", "--config", "absent.toml"]).status.code(), Some(1));
    assert_eq!(gibbsnet(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(gibbsnet(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn config_typo_is_reported_by_key() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), "typo.toml", &SMOKE.replace("[target]", "lamda = 4.0\n\n[target]"));
    let out = gibbsnet(dir.path(), &["sweep", "--config", &plan]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
}

#[test]
fn sweep_smoke_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), "smoke.toml", SMOKE);
    for o in ["a", "b"] {
        let out = gibbsnet(dir.path(), &["sweep", "--config", &plan, "--out", o, "--seed", "5"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("cells.csv"));
    }
    for f in ["cells.csv", "cells.json", "sweep.json", "config.echo.toml"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("a/cells.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    // nothing outside the plan file and the two output directories
    let mut entries: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    assert_eq!(entries, ["a", "b", "smoke.toml"]);
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), "smoke.toml", SMOKE);
    let out = gibbsnet(dir.path(), &["simulate", "--config", &plan, "--out", "sim", "--jobs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["data.csv", "data.json", "architecture.json", "predictions.csv", "report.json", "draws/draw_00000.bin"] {
        assert!(dir.path().join("sim").join(f).exists(), "{f}");
    }
    let arch: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("sim/architecture.json")).unwrap()).unwrap();
    assert_eq!(arch["L"], 3);
    assert!(arch["B"].is_null());
}

#[test]
fn classify_rejects_regression_plans_and_runs_on_classification() {
    let dir = tempfile::tempdir().unwrap();
    let reg = write_plan(dir.path(), "reg.toml", SMOKE);
    assert_eq!(gibbsnet(dir.path(), &["classify", "--config", &reg, "--out", "c"]).status.code(), Some(1));
    let cls = SMOKE.replace("\"regression\"", "\"cls_misclass\"");
    let cls = write_plan(dir.path(), "cls.toml", &cls);
    let out = gibbsnet(dir.path(), &["classify", "--config", &cls, "--out", "c"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = fs::read_to_string(dir.path().join("c/predictions.csv")).unwrap();
    assert!(preds.starts_with("x1,y,posterior_mean_logit,plug_in,majority_vote"));
}

#[test]
fn bound_and_assumptions() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), "smoke.toml", SMOKE);
    let out = gibbsnet(dir.path(), &["bound", "--config", &plan, "--out", "b"]);
    assert!(dir.path().join("b/bound.json").exists());
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    let out = gibbsnet(dir.path(), &["validate-assumptions", "--out", "v"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t3 = SMOKE.replace("[target]", "[noise]\nid = \"student_t\"\ndf = 3.0\n\n[target]");
    let t3 = write_plan(dir.path(), "t3.toml", &t3);
    assert_eq!(gibbsnet(dir.path(), &["validate-assumptions", "--config", &t3, "--out", "t"]).status.code(), Some(1));
}

#[test]
fn shipped_configs_parse() {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["regression.toml", "logistic.toml", "misclassification.toml"] {
        let path = configs.join(name);
        let out = gibbsnet(dir.path(), &["validate-assumptions", "--config", path.to_str().unwrap(), "--out", name]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join(name).join("config.echo.toml").exists());
    }
}
