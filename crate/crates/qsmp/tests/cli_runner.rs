use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const SMALL_EXAMPLE: &str = "[grid]\nn_paths = 2000\nn_steps = 20\n";

fn qsmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsmp")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn run_example(dir: &Path, out: &str, seed: &str) -> Output {
    let config = write_config(dir, SMALL_EXAMPLE);
    let out = dir.join(out);
    qsmp(&["example", "--config", &config, "--seed", seed, "--jobs", "1", "--out", out.to_str().unwrap()])
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn example_writes_reports_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let result = run_example(tmp.path(), "out", "3");
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let out = tmp.path().join("out");

    let manifest: Value = serde_json::from_slice(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest["kind"], "example");
    assert_eq!(manifest["pass"], true);
    assert_eq!(manifest["config"]["seed"], 3);
    let files = manifest["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["file"].as_str().unwrap()).collect();
    assert!(names.contains(&"report.json") && names.contains(&"example_costs.csv"), "{names:?}");
    for entry in files {
        let bytes = read(&out, entry["file"].as_str().unwrap());
        assert_eq!(entry["bytes"].as_u64(), Some(bytes.len() as u64));
        let mut hasher = Sha256::new();
        hasher.update(format!("blob {}\0", bytes.len()));
        hasher.update(&bytes);
        let hex: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(entry["hash"].as_str(), Some(hex.as_str()));
        assert!(!entry["certifies"].as_str().unwrap().is_empty());
    }

    let report: Value = serde_json::from_slice(&read(&out, "report.json")).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["checks"].as_array().unwrap().iter().any(|c| c["name"] == "optimal cost"));

    let csv = String::from_utf8(read(&out, "example_costs.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("control,method,estimate,std_error"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn reruns_are_byte_identical_and_seed_matters() {
    let tmp = tempfile::tempdir().unwrap();
    for (dir, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        assert!(run_example(tmp.path(), dir, seed).status.success());
    }
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for name in ["manifest.json", "report.json", "example_costs.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    assert_ne!(read(&a, "example_costs.csv"), read(&c, "example_costs.csv"));
}

#[test]
fn off_grid_spike_width_exits_with_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[grid]\nn_steps = 64\n[spike]\neps = [0.125, 0.0625, 0.03]\n");
    let out = tmp.path().join("out");
    let result = qsmp(&["spike", "--config", &config, "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("spike.eps[2]"), "{stderr}");
    assert!(!out.exists());
}

#[test]
fn missing_seed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let result = qsmp(&["bmo-suite", "--out", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("seed"));
}

#[test]
fn configuration_kind_must_match_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "kind = \"spike\"\nseed = 1\n");
    let result = qsmp(&["example", "--config", &config, "--out", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_one() {
    // On the convex hull [0, 1] the zero control violates the local condition.
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[model]\nname = \"example-hull\"\n[grid]\nn_paths = 400\nn_steps = 20\n");
    let out = tmp.path().join("out");
    let result = qsmp(&["check-smp", "--config", &config, "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1), "{}", String::from_utf8_lossy(&result.stdout));
    let report: Value = serde_json::from_slice(&read(&out, "report.json")).unwrap();
    assert_eq!(report["pass"], false);
    let local = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "local maximum principle").unwrap();
    assert_eq!(local["pass"], false);
}

#[test]
fn every_subcommand_runs_on_a_small_grid() {
    let tmp = tempfile::tempdir().unwrap();
    for (kind, steps, extra) in [
        ("simulate", 32, ""),
        ("solve-bsde", 32, ""),
        ("adjoint", 32, ""),
        ("check-smp", 32, ""),
        ("bmo-suite", 32, ""),
        ("spike", 64, "[spike]\neps = [0.125, 0.0625, 0.03125, 0.015625]\n"),
    ] {
        let config = write_config(tmp.path(), &format!("[grid]\nn_paths = 300\nn_steps = {steps}\n{extra}"));
        let out = tmp.path().join(kind);
        let result = qsmp(&[kind, "--config", &config, "--seed", "4", "--out", out.to_str().unwrap()]);
        assert!(matches!(result.status.code(), Some(0 | 1)), "{kind}: {}", String::from_utf8_lossy(&result.stderr));
        assert!(out.join("manifest.json").exists() && out.join("report.json").exists(), "{kind}");
    }
}
