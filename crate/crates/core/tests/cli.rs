mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualmerge"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn train_blobs(dir: &Path, side: &str, seed: &str, out: &str) {
    ok(
        dir,
        &["train", "--task", "blobs", "--side", side, "--arch", "8-16-12-4", "--seed", seed, "--epochs", "3", "--out", out],
    );
}

#[test]
fn selfcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["selfcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn mudsc_at_alpha_zero_is_activation_matching() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    train_blobs(d, "a", "1", "a");
    train_blobs(d, "b", "2", "b");
    let probe = ["--task", "blobs", "--probe-samples", "200"];
    let mut args = vec!["match", "--a", "a", "--b", "b", "--mode", "mudsc", "--alpha", "0", "--out", "mudsc.json"];
    args.extend(probe);
    ok(d, &args);
    let mut args = vec!["match", "--a", "a", "--b", "b", "--mode", "activation", "--out", "act.json"];
    args.extend(probe);
    ok(d, &args);
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("mudsc.json"), read("act.json"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    train_blobs(d, "a", "3", "first");
    train_blobs(d, "a", "3", "second");
    for ext in ["manifest.json", "blob"] {
        let read = |stem: &str| std::fs::read(d.join(format!("{stem}.{ext}"))).unwrap();
        assert_eq!(read("first"), read("second"), "{ext}");
    }
    train_blobs(d, "b", "4", "other");
    for name in ["m1", "m2"] {
        ok(
            d,
            &["match", "--a", "first", "--b", "other", "--task", "blobs", "--probe-samples", "100", "--out", &format!("{name}.json")],
        );
    }
    for suffix in ["", ".trace.csv"] {
        let read = |stem: &str| std::fs::read(d.join(format!("{stem}.json{suffix}"))).unwrap();
        assert_eq!(read("m1"), read("m2"));
    }
}

#[test]
fn failures_print_one_json_line_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["eval", "--model", "missing", "--task", "blobs"]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["exit_code"], 3);
    train_blobs(d, "a", "1", "a");
    let out = run(d, &["match", "--a", "a", "--b", "a", "--alpha", "1.5", "--task", "blobs", "--out", "p.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("1.5"));
}

#[test]
fn width_256_mnist_pipeline_within_five_minutes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = common::data_dir();
    let data = data.to_str().unwrap();
    let started = Instant::now();
    for (side, seed) in [("a", "0"), ("b", "1")] {
        ok(d, &["train", "--data", data, "--side", side, "--arch", "784-256-256-256-64", "--seed", seed, "--out", side]);
    }
    ok(d, &["match", "--data", data, "--a", "a", "--b", "b", "--out", "perms.json"]);
    ok(d, &["merge", "--data", data, "--a", "a", "--b", "b", "--perms", "perms.json", "--out", "merged"]);
    let report: serde_json::Value =
        serde_json::from_str(&ok(d, &["--json", "eval", "--data", data, "--model", "merged"])).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let avg = report["avg_acc"].as_f64().unwrap();
    assert!(avg > 0.6, "merged average accuracy {avg}");
    assert!(secs < 300.0, "pipeline took {secs:.0}s");
}
