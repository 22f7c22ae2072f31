use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "[lstm]\nhidden = 4\nwindow = 10\nepochs = 2\nwindows_per_epoch = 64\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoipdm"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn with<'a>(cmd: &[&'a str], common: &[&'a str]) -> Vec<&'a str> {
    [cmd, common].concat()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let common = ["--subset", "SYN001", "--data-dir", "data", "--out-dir", "out", "--config", "tiny.toml"];

    let files = ok(d, &with(&["synth", "--train-units", "4", "--test-units", "3"], &common));
    assert_eq!(files.lines().count(), 3);
    assert!(d.join("data/RUL_SYN001.txt").exists());

    let train = ok(d, &with(&["train"], &common));
    assert!(train.contains("holdout RMSE"));
    for f in ["hierarchy.cfg", "knowledge_base.kb", "model.lstm", "training.toml", "wer_selection.txt"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }

    ok(d, &with(&["quantify", "--split", "train"], &common));
    let q = fs::read_to_string(d.join("out/quantification/train_unit001.tsv")).unwrap();
    assert!(q.starts_with("cycle\tcluster\tweight\n"));

    let det = ok(d, &with(&["detect"], &common));
    assert_eq!(det.lines().count(), 4);
    assert!(d.join("out/detect_test.tsv").exists());

    let rul = ok(d, &with(&["rul", "--unit", "2"], &common));
    assert_eq!(rul.lines().count(), 2);
    assert!(rul.lines().nth(1).unwrap().starts_with("2\t"));

    let summary = ok(d, &with(&["evaluate"], &common));
    assert!(summary.contains("early_detection_rate"));
    assert!(d.join("out/evaluation.tsv").exists());

    ok(d, &with(&["export-plots"], &common));
    let plot = fs::read_to_string(d.join("out/plots/test_unit003_ewma.tsv")).unwrap();
    assert!(plot.starts_with("cycle\t"));
}

#[test]
fn missing_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["train", "--data-dir", "nowhere"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = run(tmp.path(), &["evaluate", "--out-dir", "nothing"]);
    assert!(!out.status.success());

    fs::write(tmp.path().join("bad.toml"), "[spc]\nlambda = 2.0\n").unwrap();
    let out = run(tmp.path(), &["train", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}
