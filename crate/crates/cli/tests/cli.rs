use std::path::Path;
use std::process::{Command, Output};

fn otda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otda"))
        .args(args)
        .env("OTDA_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn small_dataset(dir: &Path) -> String {
    let cfg = dir.join("gen.json");
    std::fs::write(&cfg, r#"{"samples_per_domain": 400}"#).unwrap();
    let data = dir.join("data").display().to_string();
    let out = otda(&["gen-data", "--seed", "1", "--out", &data, "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error is JSON")
}

#[test]
fn help_exits_zero() {
    assert!(otda(&["--help"]).status.success());
    assert!(otda(&["train", "--help"]).status.success());
}

#[test]
fn bad_flags_are_usage_errors() {
    let out = otda(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "usage");

    let out = otda(&["train", "--data", "x", "--out", "y", "--method", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_data_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing").display().to_string();
    let out_dir = tmp.path().join("out").display().to_string();
    let out = otda(&["train", "--data", &missing, "--out", &out_dir]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert!(!err["message"].as_str().unwrap().is_empty());
}

#[test]
fn invalid_config_values_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let out_dir = tmp.path().join("out").display().to_string();
    let out = otda(&["sweep", "--data", &data, "--out", &out_dir, "--seeds", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = otda(&["sweep", "--data", &data, "--out", &out_dir, "--alpha", "0.1", "--alphas", "1,2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = otda(&["train", "--data", &data, "--out", &out_dir, "--alpha", "-1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_grid_table_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let root = tmp.path().join("out");
    let out_dir = root.display().to_string();
    let out = otda(&[
        "sweep", "--data", &data, "--out", &out_dir, "--seeds", "2", "--epochs", "1",
        "--alphas", "1e-5,1e-4,1e-3,1e-2,1e-1,1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let grid = std::fs::read_to_string(root.join("tables/ot_alpha_grid.csv")).unwrap();
    let rows: Vec<Vec<&str>> = grid.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.len() == 7), "{grid}");
    assert_eq!(rows[1][0], "validation");
    assert_eq!(rows[2][0], "test");

    let reports = std::fs::read_dir(root.join("reports")).unwrap().count();
    assert_eq!(reports, 12);
    assert!(root.join("sweep_ot.json").exists());
    assert!(root.join("tables/method_comparison.csv").exists());
    assert!(root.join("plots/ot_alpha_curves.svg").exists());
}

#[test]
fn swap_eval_covers_both_orientations() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let root = tmp.path().join("out");
    let out = otda(&[
        "swap-eval", "--data", &data, "--out", root.to_str().unwrap(), "--seeds", "1", "--epochs", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(root.join("tables/swap_comparison.csv")).unwrap();
    for method in ["erm", "ot", "dann"] {
        assert!(table.contains(method), "{table}");
    }
}

#[test]
fn selftest_passes() {
    let out = otda(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}
