use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hsiga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsiga"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join("suite");
    let o = hsiga(&["synth", "--out", p(&out), "--seed", seed, "--rows", "30", "--cols", "30", "--bands", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

const QUICK: [&str; 12] = [
    "--removed-bands", "none", "--htc-quota", "10", "--hic-quota", "20", "--folds", "3", "--repetitions", "2", "--population", "6",
];

#[test]
fn knn_grid_search_writes_four_day_rows() {
    let dir = tempfile::tempdir().unwrap();
    let suite = synth(dir.path(), "7");
    let out = dir.path().join("run");
    let mut args = vec!["run", "--input", p(&suite), "--out", p(&out), "--scenario", "htc", "--selector", "gs", "--classifier", "knn", "--seed", "7"];
    args.extend(QUICK);
    let o = hsiga(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "scenario,selector,classifier,day,accuracy_mean,accuracy_std,band_count");
    let days: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(days, ["1", "7", "21", "all"]);
    assert!(out.join("model.bin").exists() && out.join("model.bands").exists());
    assert!(!out.join("history.csv").exists());

    let table = hsiga(&["report", p(&out.join("report.csv"))]);
    assert!(table.status.success());
    assert_eq!(String::from_utf8_lossy(&table.stdout).lines().count(), 5);
}

#[test]
fn missing_input_is_a_data_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = hsiga(&["run", "--input", p(&dir.path().join("absent")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert!(!o.stderr.is_empty());
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(hsiga(&["run", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(hsiga(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hsiga(&["run", "--selector", "ga", "--classifier", "knn", "--input", "x", "--out", "y"]).status.code(), Some(1));
    assert_eq!(hsiga(&["run", "--scenario", "htc"]).status.code(), Some(1));
    assert_eq!(hsiga(&["--help"]).status.code(), Some(0));
}

#[test]
fn ga_run_is_reproducible_and_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let suite = synth(dir.path(), "2");
    let before = snapshot(&suite);
    let mut reports = Vec::new();
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let mut args = vec!["run", "--input", p(&suite), "--out", p(&out), "--scenario", "hic", "--epochs", "3", "--workers", workers];
        args.extend(QUICK);
        let o = hsiga(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("history.csv").exists());
        reports.push(snapshot(&out));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(snapshot(&suite), before, "inputs must not change");
}

#[test]
fn config_file_and_print_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "scenario=hicvs-large\nseed=11\nskip-derivative=true\n").unwrap();
    let o = hsiga(&["run", "--config", p(&cfg), "--seed", "12", "--print-config"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("scenario=hicvs-large\n"));
    assert!(text.contains("seed=12\n"));
    assert!(text.contains("skip-derivative=true\n"));

    // The printed configuration is itself a valid config file.
    let again = dir.path().join("again.cfg");
    fs::write(&again, &text).unwrap();
    let o = hsiga(&["run", "--config", p(&again), "--print-config"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), text);

    fs::write(&cfg, "not a pair\n").unwrap();
    assert_eq!(hsiga(&["run", "--config", p(&cfg)]).status.code(), Some(1));
    assert_eq!(hsiga(&["run", "--config", p(&dir.path().join("missing.cfg"))]).status.code(), Some(1));
}

#[test]
fn preprocess_then_run_matches_raw_run() {
    let dir = tempfile::tempdir().unwrap();
    let suite = synth(dir.path(), "4");
    let pre = dir.path().join("pre");
    let o = hsiga(&["preprocess", "--input", p(&suite), "--out", p(&pre), "--removed-bands", "none"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sidecar = fs::read_to_string(pre.join("F1.json")).unwrap();
    assert!(sidecar.contains("\"features\""));
    assert_eq!(hsiga(&["preprocess", "--input", p(&pre), "--out", p(&dir.path().join("again"))]).status.code(), Some(2));
    assert_eq!(hsiga(&["preprocess", "--input", p(&suite), "--out", p(&suite)]).status.code(), Some(1));

    let mut rows = Vec::new();
    for (name, input) in [("raw", &suite), ("pre", &pre)] {
        let out = dir.path().join(name);
        let mut args = vec!["run", "--input", p(input), "--out", p(&out), "--selector", "gs", "--classifier", "knn"];
        args.extend(QUICK);
        let o = hsiga(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        rows.push(fs::read_to_string(out.join("report.csv")).unwrap());
    }
    assert_eq!(rows[0].lines().count(), rows[1].lines().count());
}

#[test]
fn skipping_the_derivative_lowers_hic_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    assert!(hsiga(&["synth", "--out", p(&suite), "--seed", "1"]).status.success());
    let mut combined = Vec::new();
    for (name, extra) in [("with", None), ("without", Some("--skip-derivative"))] {
        let out = dir.path().join(name);
        let mut args = vec![
            "run", "--input", p(&suite), "--out", p(&out), "--scenario", "hic", "--seed", "3", "--population", "12",
            "--epochs", "6", "--repetitions", "2", "--hic-quota", "25", "--folds", "5",
        ];
        args.extend(extra);
        let o = hsiga(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let report = fs::read_to_string(out.join("report.csv")).unwrap();
        let all = report.lines().find(|l| l.split(',').nth(3) == Some("all")).unwrap().to_string();
        combined.push(all.split(',').nth(4).unwrap().parse::<f64>().unwrap());
    }
    assert!(combined[1] < combined[0], "ablation {} vs default {}", combined[1], combined[0]);
}
