use std::fs;
use std::process::Command;

use i2m2::genmodel::{discrete_d1, enumerate_joint};
use i2m2::harness::{decode_csv, CSV_HEADER};

fn i2m2(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_i2m2")).args(args).output().unwrap()
}

#[test]
fn generate_train_eval_reaches_bayes_on_d1() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n).display().to_string();
    let common = ["--set", "preset=discrete-d1", "--set", "n_train=50000", "--seed", "4"];
    for (split, file) in [("train", "train.data"), ("test", "test.data")] {
        let out = i2m2(&[&["generate", "--split", split, "--out", &path(file)][..], &common].concat());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = i2m2(&[&["train", "--data", &path("train.data"), "--out", &path("d1.model")][..], &common].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = i2m2(&["eval", "--model", &path("d1.model"), "--data", &path("test.data")]);
    assert!(out.status.success());

    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let accuracy = report["metrics"]["accuracy"].as_f64().unwrap();
    let bayes = enumerate_joint(&discrete_d1().unwrap()).unwrap().bayes_accuracy();
    assert!((accuracy - bayes).abs() <= 0.015, "{accuracy} vs {bayes}");
}

#[test]
fn compare_writes_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d1.cfg");
    fs::write(
        &cfg,
        "[generator]\npreset = discrete-d1\nn_train = 2000\nn_test = 1000\n\n[experiment]\nseeds = 1,2\nvariants = inter, i2m2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = i2m2(&["compare", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let stdout = String::from_utf8(out.stdout).unwrap();
    let paths: Vec<&str> = stdout.lines().collect();
    assert_eq!(paths.len(), 2);
    assert!(paths[0].starts_with(out_dir.join("discrete-d1").to_str().unwrap()));
    assert!(paths[0].ends_with(".csv") && paths[1].ends_with(".json"));

    let csv = fs::read_to_string(paths[0]).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    let records = decode_csv(&csv).unwrap();
    let variants: Vec<(&str, u64)> = records.iter().map(|r| (r.variant.as_str(), r.seed)).collect();
    assert_eq!(
        variants,
        [("bayes", 1), ("bayes", 2), ("i2m2", 1), ("i2m2", 2), ("inter", 1), ("inter", 2)]
    );
}

#[test]
fn malformed_config_reports_line_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[train]\nbatch_size = many\n").unwrap();
    let out = i2m2(&["compare", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2") && err.contains("batch_size"), "{err}");
}
