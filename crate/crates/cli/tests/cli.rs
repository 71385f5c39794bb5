use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swiss-cheese"))
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    bin().arg("--config").arg(&cfg).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn empty_b_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(dir.path(), "[rate_curve]\nb = []\n", &["rate-curve", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn negative_kappa_fails_before_any_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(dir.path(), "[verify]\nkappa = -1.0\n", &["verify", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kappa"));
    assert!(!out.join("verify.json").exists());
}

#[test]
fn unknown_keys_and_bad_overrides_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "[rate_curve]\nbee = [0.5]\n", &["rate-curve"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), "", &["verify", "--tol-override", "pohozaev"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), "", &["verify", "--tol-override", "nonsense=1"]).status.code(), Some(2));
    assert_eq!(bin().arg("no-such-command").output().unwrap().status.code(), Some(2));
}

#[test]
fn single_point_rate_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(dir.path(), "[rate_curve]\nb = [0.5]\n", &["rate-curve", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("rate_curve.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    let vals: Vec<f64> = rows[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((vals[1] - 7.803_395_368_629).abs() < 1e-6 * 7.8);
    assert!(out.join("profiles/b_00.csv").exists());
    let ids: Value = serde_json::from_str(&std::fs::read_to_string(out.join("identities.json")).unwrap()).unwrap();
    assert_eq!(ids["points"][0]["pohozaev_pass"], true);
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    for file in ["rate_curve.csv", "profiles/b_00.csv", "identities.json", "config.toml"] {
        assert!(m["outputs"][file].is_string(), "{file} missing from manifest");
    }
}

#[test]
fn single_walk_of_length_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = "[walk_stats]\nns = [1]\nwalks = 1\ngreen_n_max = 1000\nmc_walks = 1000\nmc_cutoff = 100\n";
    let o = run(dir.path(), cfg, &["walk-stats", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("walks.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let col = |name: &str| rows[0].iter().position(|c| *c == name).unwrap();
    assert_eq!(rows[1][col("R_n")], "1");
    assert_eq!(rows[1][col("n")], "1");
    let kappa: Value = serde_json::from_str(&std::fs::read_to_string(out.join("kappa.json")).unwrap()).unwrap();
    assert!(kappa["estimators_agree"].is_boolean());
}

#[test]
fn tolerance_overrides_are_honored_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(dir.path(), "", &["verify", "--out", out.to_str().unwrap(), "--tol-override", "pohozaev=1e-30"]);
    // No solver meets 1e-30, so the Pohozaev check must fail.
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(&out);
    assert_eq!(m["status"], "hard_failure");
    let near = |v: &Value| (v.as_f64().unwrap() / 1e-30 - 1.0).abs() < 1e-12;
    assert!(near(&m["tolerance_overrides"]["pohozaev"]));
    assert!(near(&m["config"]["tolerances"]["pohozaev"]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    let poh = checks.iter().find(|c| c["name"] == "pohozaev").unwrap();
    assert_eq!(poh["pass"], false);
    assert!(near(&poh["tolerance"]));
    assert!(checks.iter().filter(|c| c["name"] != "pohozaev").all(|c| c["pass"] == true));
}

#[test]
fn default_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(dir.path(), "", &["verify", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 7);
    assert_eq!(report["pass"], true);
}

#[test]
fn show_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "seed = 7\n[mv_demo]\nsamples = 10\n", &["show-config", "--workers", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let again = run(dir.path(), &text, &["show-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    let v: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(v["seed"].as_integer(), Some(7));
    assert_eq!(v["workers"].as_integer(), Some(3));
    assert_eq!(v["mv_demo"]["samples"].as_integer(), Some(10));
}

const SMALL_TUBE: &str = "[tube]\nn = 1000\nb = 0.7\nprofile_b = 0.5\ntarget_accepted = 8\nbudget = 2000\nchunk = 64\nunconditioned = 8\nminimizer_samples = 200\ngreen_n_max = 1000\n";

#[test]
fn zero_acceptances_are_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = SMALL_TUBE.replace("b = 0.7", "b = 0.01").replace("budget = 2000", "budget = 50");
    let o = run(dir.path(), &cfg, &["tube", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out)["status"], "inconclusive");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("distances.json")).unwrap()).unwrap();
    assert_eq!(report["acceptance"]["accepted"], 0);
    assert_eq!(report["acceptance"]["attempts"], 50);
}

#[test]
fn unconstraining_level_gives_matching_groups() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = SMALL_TUBE
        .replace("b = 0.7", "b = 1.0")
        .replace("target_accepted = 8", "target_accepted = 30")
        .replace("unconditioned = 8", "unconditioned = 30");
    let o = run(dir.path(), &cfg, &["tube", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("distances.json")).unwrap()).unwrap();
    assert_eq!(report["acceptance"]["rate"], 1.0);
    let all: Vec<f64> = ["conditioned", "unconditioned"]
        .iter()
        .flat_map(|g| report[*g].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect::<Vec<_>>())
        .collect();
    assert!(all.iter().all(|v| v.is_finite() && *v >= 0.0));
    let p = report["rank_sum"]["p_value"].as_f64().unwrap();
    assert!(p > 0.01 && p < 0.99, "p = {p}");
}

fn outputs(out: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                files.push((p.strip_prefix(out).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn csv_outputs_do_not_depend_on_worker_count() {
    let cfg = format!(
        "{SMALL_TUBE}[rate_curve]\nb = [0.3, 0.6]\n[walk_stats]\nns = [1000, 5000]\nwalks = 20\ngreen_n_max = 1000\nmc_walks = 2000\nmc_cutoff = 200\n[mv_demo]\nsamples = 200\nreplicates = 3\n"
    );
    for cmd in ["rate-curve", "walk-stats", "tube", "mv-demo"] {
        let dir = tempfile::tempdir().unwrap();
        let results: Vec<Vec<(PathBuf, Vec<u8>)>> = ["1", "4"]
            .iter()
            .map(|w| {
                let out = dir.path().join(format!("w{w}"));
                let o = run(dir.path(), &cfg, &[cmd, "--workers", w, "--out", out.to_str().unwrap()]);
                assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
                outputs(&out)
            })
            .collect();
        assert!(!results[0].is_empty());
        assert_eq!(results[0], results[1], "{cmd} differs between worker counts");
    }
}
