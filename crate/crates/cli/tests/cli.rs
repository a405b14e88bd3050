use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adrl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adrl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = adrl(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Relative paths of every file under `dir`, sorted.
fn files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            if e.path().is_dir() {
                stack.push(e.path());
            } else {
                out.push(e.path().strip_prefix(dir).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path, skip: &str) {
    let (fa, fb) = (files(a), files(b));
    assert_eq!(fa, fb);
    for f in fa.iter().filter(|f| !f.ends_with(skip)) {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

const SMALL: [&str; 8] = ["--set", "d=8", "--set", "hidden=16", "--set", "heads=2", "--set", "k=5"];

#[test]
fn synth_is_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(&["synth", "--n", "200", "--v", "2", "--c", "4", "--seed", "1", "--out", out], d);
    }
    assert_same_tree(&d.join("a"), &d.join("b"), "\0");
    ok(&["synth", "--n", "200", "--v", "2", "--c", "4", "--seed", "2", "--out", "c"], d);
    assert_ne!(fs::read(d.join("a/view0.mvml")).unwrap(), fs::read(d.join("c/view0.mvml")).unwrap());
}

#[test]
fn fmr_of_one_is_rejected_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = adrl(&["mask", "--fmr", "1.0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("fmr must be < 1"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(files(dir.path()).is_empty());
}

#[test]
fn unknown_flags_and_verbs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["synth", "--colour", "red"][..], &["fit"][..], &["train", "--dataset"][..]] {
        let out = adrl(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert_eq!(stderr(&out).trim_end().lines().count(), 1, "{args:?}");
    }
    assert!(files(dir.path()).is_empty());
}

#[test]
fn gradcheck_tiny_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["gradcheck", "--scale", "tiny", "--out", "grad.json"], dir.path());
    let rows: Vec<&str> = stdout.lines().filter(|l| l.contains("entries")).collect();
    assert!(rows.len() > 20, "{stdout}");
    assert!(rows.iter().all(|l| l.ends_with("ok")), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("grad.json")).unwrap()).unwrap();
    for p in report["params"].as_array().unwrap() {
        assert!(p["max_rel_error"].as_f64().unwrap() < 1e-4, "{p}");
    }
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "60", "--c", "3", "--out", "src"], d);
    ok(&["split", "--dataset", "src", "--out", "split"], d);
    let mut args = vec!["train", "--dataset", "split", "--out", "run", "--epochs", "3", "--set", "lr=1e300"];
    args.extend(SMALL);
    let out = adrl(&args, d);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("epoch 1"), "{}", stderr(&out));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "150", "--v", "2", "--c", "4", "--seed", "4", "--out", "src"], d);
    ok(&["split", "--dataset", "src", "--ratios", "7:1:2", "--seed", "4", "--out", "split"], d);
    ok(&["mask", "--dataset", "split", "--fmr", "0.3", "--lmr", "0.5", "--seed", "4", "--out", "masked"], d);

    // masking twice is a validation error, not a silent double mask
    let again = adrl(&["mask", "--dataset", "masked", "--out", "twice"], d);
    assert_eq!(again.status.code(), Some(1));
    assert!(!d.join("twice").exists());

    fs::write(d.join("run.cfg"), "# small\nepochs=4\nseed=3\n").unwrap();
    for out in ["run_a", "run_b"] {
        let mut args = vec!["train", "--config", "run.cfg", "--dataset", "masked", "--out", out];
        args.extend(SMALL);
        ok(&args, d);
    }
    assert_same_tree(&d.join("run_a"), &d.join("run_b"), "timing.log");
    assert_eq!(fs::read_to_string(d.join("run_a/epochs.jsonl")).unwrap().lines().count(), 4);

    ok(&["eval", "--model", "run_a/model.json", "--dataset", "masked", "--out", "metrics.json"], d);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run_a/summary.json")).unwrap()).unwrap();
    assert_eq!(metrics, summary["test"]);

    let mismatch = adrl(&["eval", "--model", "run_a/model.json", "--dataset", "../nope"], d);
    assert_eq!(mismatch.status.code(), Some(1));

    let mut args = vec![
        "ablate", "--dataset", "src", "--variant", "all", "--repetitions", "2", "--out", "abl", "--epochs", "3",
    ];
    args.extend(SMALL);
    ok(&args, d);
    for v in ["full", "no_S1", "no_S2", "no_S3"] {
        for r in ["rep0", "rep1"] {
            assert!(d.join("abl").join(v).join(r).join("summary.json").is_file(), "{v}/{r}");
        }
    }
    let no_s2 = fs::read_to_string(d.join("abl/no_S2/rep0/epochs.jsonl")).unwrap();
    for line in no_s2.lines() {
        let e: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!((e["re"].as_f64(), e["dis"].as_f64()), (Some(0.0), Some(0.0)));
    }

    let stdout = ok(&["report", "--runs", "abl", "--out", "report"], d);
    let table = fs::read_to_string(d.join("report/table.txt")).unwrap();
    assert!(stdout.starts_with(&table), "{stdout}");
    assert!(table.starts_with("method"), "{table}");
    assert_eq!(table.lines().count(), 5, "{table}");
    let cell = table.lines().nth(1).unwrap().split_whitespace().nth(3).unwrap();
    let (mean, std) = cell.trim_end_matches(')').split_once('(').unwrap();
    assert_eq!((mean.len(), std.len()), (5, 5), "{cell}");
    for f in ["table.txt", "loss_curves.svg", "mi_trends.svg", "sweep.svg"] {
        let text = fs::read_to_string(d.join("report").join(f)).unwrap();
        assert!(!text.is_empty(), "{f}");
    }
    assert!(fs::read_to_string(d.join("report/mi_trends.svg")).unwrap().contains("private overlap bound"));
    ok(&["report", "--runs", "abl", "--out", "report2"], d);
    assert_same_tree(&d.join("report"), &d.join("report2"), "\0");

    let empty = adrl(&["report", "--runs", "src"], d);
    assert_eq!(empty.status.code(), Some(1));
}
