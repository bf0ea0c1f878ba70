use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ctxvad(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxvad"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = ctxvad(args, cwd);
    assert!(
        out.status.success(),
        "ctxvad {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"
[autoencoder]
max_patches = 128
[autoencoder.spec]
input_size = 16
encoder_widths = [8, 16, 16, 32]
decoder_widths = [16, 16, 8]
[autoencoder.train]
epochs = 2
[flow]
source = "provided"
[training]
n_anomalous = 20
"#;

#[test]
fn stage_commands_chain_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("small.toml"), SMALL).unwrap();
    ok(&["synth", "--preset", "demo", "--seed", "4", "--frames", "60", "--out", "data"], d);
    assert!(d.join("data/train").is_dir() && d.join("data/test").is_dir());
    for role in ["appearance", "temporal"] {
        ok(&["train-ae", "--config", "small.toml", "--role", role, "--data", "data/train", "--out", "ae"], d);
    }
    for split in ["train", "test"] {
        let out = format!("feat/{split}.csv");
        ok(&["extract", "--config", "small.toml", "--bundle", "ae", "--data", &format!("data/{split}"), "--out", &out], d);
    }
    assert!(d.join("feat/test_frames.csv").is_file());
    ok(
        &["train-infer", "--config", "small.toml", "--features", "feat/train.csv", "--labels", "feat/train_labels.csv", "--k2", "2", "--out", "model"],
        d,
    );
    ok(&["score", "--bundle", "model", "--features", "feat/test.csv", "--out", "scores"], d);
    let report = ok(&["evaluate", "--scores", "scores", "--labels", "feat/test_frames.csv", "--out", "eval"], d);
    let auc: f64 = report
        .split_whitespace()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("no AUC in {report:?}"));
    assert!((0.0..=1.0).contains(&auc));
    assert!(d.join("eval/report.json").is_file() && d.join("eval/roc.svg").is_file());
}

#[test]
fn evaluate_single_video() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("v.csv"), "frame,score,verdict\n0,0.1,normal\n1,0.9,anomalous\n2,0.2,normal\n3,0.8,anomalous\n").unwrap();
    fs::write(d.join("gt.csv"), "frame,label\n0,0\n1,1\n2,0\n3,1\n").unwrap();
    let out = ok(&["evaluate", "--scores", "v.csv", "--labels", "gt.csv"], d);
    assert!(out.starts_with("frame AUC 1.000000"), "{out}");
}

#[test]
fn scoring_without_a_bundle_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("f.csv"), "").unwrap();
    let out = ctxvad(&["score", "--bundle", "nope", "--features", "f.csv", "--out", "s"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train-infer"), "{err}");
}

#[test]
fn unknown_stage_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ctxvad(&["run", "--stages", "synth,polish"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("polish"));
}
