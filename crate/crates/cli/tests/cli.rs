use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn afdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afdr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// CSV with `p` Gaussian columns and a logistic response driven by x1.
fn write_dataset(dir: &Path, n: usize, p: usize, signal: f64, seed: u64) -> PathBuf {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut text = (1..=p).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    text.push_str(",y\n");
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let prob = 1.0 / (1.0 + (-signal * row[0]).exp());
        let y = u8::from(rng.random::<f64>() < prob);
        for v in &row {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{y}\n"));
    }
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn knockoffs_writes_outputs_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 80, 4, 1.0, 1);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = afdr(&["knockoffs", "--input", s(&data), "--response", "y", "--seed", "7", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let xa = fs::read(a.join("xtilde.csv")).unwrap();
    assert_eq!(xa, fs::read(b.join("xtilde.csv")).unwrap());
    assert_eq!(String::from_utf8(xa).unwrap().lines().count(), 81);
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["p"], 4);
    assert!(model["lambda_min_v"].as_f64().unwrap() > 0.0);
    assert_eq!(model["s"].as_array().unwrap().len(), 4);

    let c = tmp.path().join("c");
    afdr(&["knockoffs", "--input", s(&data), "--seed", "8", "--out", s(&c)]);
    assert_ne!(fs::read(a.join("xtilde.csv")).unwrap(), fs::read(c.join("xtilde.csv")).unwrap());
}

#[test]
fn non_binary_response_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 30, 3, 1.0, 2);
    let o = afdr(&["knockoffs", "--input", s(&data), "--response", "x1", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("non-binary response"), "{}", stderr(&o));
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn missing_file_and_bad_flags_are_validation_errors() {
    let o = afdr(&["select", "--input", "/nonexistent.csv", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 30, 3, 1.0, 3);
    let o = afdr(&["select", "--input", s(&data), "--q", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("q must lie in"));
    let o = afdr(&["select", "--input", s(&data), "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_run_selection_has_one_provenance_record() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 150, 5, 3.0, 4);
    let out = tmp.path().join("sel");
    let o = afdr(&[
        "select", "--input", s(&data), "--statistic", "lsm", "--k", "1", "--grid-size", "30",
        "--seed", "3", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("FDR LSM"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 1);
    assert_eq!(json["k"], 1);
    assert_eq!(json["method"], "FDR LSM");
}

#[test]
fn lcd_cv_aggregated_label() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 120, 4, 2.0, 5);
    let out = tmp.path().join("sel");
    let o = afdr(&[
        "select", "--input", s(&data), "--statistic", "lcd-cv", "--q", "0.1", "--k", "3",
        "--grid-size", "20", "--folds", "5", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert_eq!(json["method"], "AFDR LCD_CV");
    assert_eq!(json["runs"].as_array().unwrap().len(), 3);
    let q: f64 = json["runs"].as_array().unwrap().iter().map(|r| r["q"].as_f64().unwrap()).sum();
    assert!((q - 0.1).abs() < 1e-12);
}

#[test]
fn pure_noise_output_format() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 100, 5, 0.0, 6);
    let o = afdr(&["select", "--input", s(&data), "--statistic", "lsm", "--grid-size", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().nth(1).unwrap();
    assert!(line.contains("selected, threshold"), "{line}");
    if line.starts_with("0 variables") {
        assert!(line.ends_with("threshold inf"));
    }
}

#[test]
fn refit_rejects_out_of_range_support() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 60, 5, 1.0, 7);
    let o = afdr(&["refit", "--input", s(&data), "--support", "1,4,7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("index out of range"), "{}", stderr(&o));
}

#[test]
fn refit_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 200, 3, 1.5, 8);
    let out = tmp.path().join("refit");
    let o = afdr(&["refit", "--input", s(&data), "--support", "1,3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("Logit") && text.contains("OLS") && text.contains("x1"));
    assert!(text.contains("Average marginal effects"));
    let csv = fs::read_to_string(out.join("logistic.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("ols.csv").exists());
}

#[test]
fn refit_separation_is_a_computational_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sep.csv");
    fs::write(&path, "x1,y\n-1,0\n-1,0\n1,1\n1,1\n").unwrap();
    let o = afdr(&["refit", "--input", s(&path), "--support", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("separation"));
}

#[test]
fn simulate_writes_one_row_per_replicate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.cfg");
    fs::write(
        &cfg,
        "# small scenario\nn = 120\np = 6\ns0 = 2\namplitude = 3\nstatistic = lsm\n\
         grid_size = 20\nreplicates = 3\nseed = 5\n",
    )
    .unwrap();
    let out = tmp.path().join("r");
    let o = afdr(&["simulate", "--scenario", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["replicates"], 3);

    fs::write(&cfg, "n = 100\nbogus = 1\n").unwrap();
    let o = afdr(&["simulate", "--scenario", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_renders_three_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 100, 3, 2.0, 9);
    let out = tmp.path().join("rep");
    let o = afdr(&[
        "report", "--input", s(&data), "--methods", "empty,full,fdr-lsm", "--grid-size", "15",
        "--folds", "5", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let header: Vec<&str> = text.lines().next().unwrap().split('|').map(str::trim).collect();
    assert_eq!(header, ["Method", "Model size", "Pred. error"], "{text}");
    assert!(text.contains("Empty") && text.contains("Full") && text.contains("FDR LSM"));

    let stored = out.join("report.json");
    let o = afdr(&["report", "--results", s(&stored)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), text);

    let o = afdr(&["report", "--input", s(&data), "--methods", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}
