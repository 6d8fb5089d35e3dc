//! End-to-end CLI tests against the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fastssl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastssl"))
        .args(args)
        .current_dir(dir)
        .env("FASTSSL_OUT", dir.join("runs"))
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Overrides shrinking a run to sub-second size.
const TINY: &[&str] = &[
    "--epochs", "2",
    "--warmup_epochs", "1",
    "--samples_per_class", "40",
    "--num_classes", "4",
    "--batch_size", "16",
    "--canvas_size", "24",
    "--image_size", "16",
    "--min_resolution", "8",
    "--resolution_quantum", "4",
    "--selection_resolution", "8",
];

#[test]
fn overhead_prints_the_reference_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let out = fastssl(
        &["overhead", "--res", "224", "--sel-res", "64", "--num-positives", "4", "--cost-ratio", "6"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("overhead              5.16%"), "{text}");
    assert!(text.contains("6 pairs"), "{text}");
}

#[test]
fn pairs_lists_all_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let out = fastssl(&["pairs", "--num-positives", "4"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("4 positives -> 6 pairs"), "{text}");
    for pair in ["(0,1)", "(0,2)", "(0,3)", "(1,2)", "(1,3)", "(2,3)"] {
        assert!(text.contains(pair), "{text}");
    }
}

#[test]
fn emit_schedule_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let mut args = vec!["emit-schedule", "--out", csv.to_str().unwrap()];
    args.extend_from_slice(TINY);
    assert!(fastssl(&args, dir.path()).status.success());
    let first = fs::read(&csv).unwrap();
    assert!(fastssl(&args, dir.path()).status.success());
    assert_eq!(first, fs::read(&csv).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("step,lr,momentum,resolution,aug_magnitude\n"));
    // 2 epochs x 8 steps, plus header and the endpoint row.
    assert_eq!(text.lines().count(), 1 + 16 + 1);
}

#[test]
fn train_then_eval_round_trips_through_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    let out = fastssl(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("runs/train/run-seed1");
    for file in ["config.cfg", "schedule.csv", "metrics.jsonl", "model.manifest", "model.bin", "cost_report.json"] {
        assert!(run_dir.join(file).exists(), "{file} missing");
    }
    let metrics = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    // Every line parses as a JSON object with the expected fields.
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for field in ["epoch", "step", "lr", "momentum", "resolution", "magnitude", "train_loss", "knn_accuracy", "cumulative_flops", "embedding_std"] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
    }

    let stem = run_dir.join("model");
    let mut eval_args = vec!["eval", "--checkpoint", stem.to_str().unwrap()];
    eval_args.extend_from_slice(TINY);
    let out = fastssl(&eval_args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("knn accuracy"), "{}", stdout(&out));
}

#[test]
fn lr_find_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["lr-find", "--steps", "20", "--lr-lo", "0.001", "--lr-hi", "0.5"];
    args.extend_from_slice(TINY);
    let out = fastssl(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("runs/lr_trace.csv")).unwrap();
    assert!(trace.starts_with("step,lr,train_loss,val_loss\n"));
    assert!(trace.lines().count() > 2);
    assert!(stdout(&out).contains("min_lr"), "{}", stdout(&out));
}

#[test]
fn estimate_cost_reports_both_profiles() {
    let dir = tempfile::tempdir().unwrap();
    for profile in ["measured", "quadratic"] {
        let mut args = vec!["estimate-cost", "--profile", profile];
        args.extend_from_slice(TINY);
        let out = fastssl(&args, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = stdout(&out);
        assert!(text.contains("combined speedup"), "{text}");
        assert!(text.contains("convention"), "{text}");
    }
}

#[test]
fn experiment_runs_a_preset_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["experiment", "efficient", "--seed", "9"];
    args.extend_from_slice(TINY);
    let out = fastssl(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir
        .path()
        .join("runs/efficient/efficient-seed9/metrics.jsonl")
        .exists());
    assert!(stdout(&out).contains("speedup vs baseline"));
}

#[test]
fn failures_exit_nonzero_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown preset.
    let out = fastssl(&["experiment", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
    // Config file with an invalid key reports its line.
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 10\nwat = 1\n").unwrap();
    let out = fastssl(&["emit-schedule", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("wat"), "{err}");
    // Invalid override value.
    let out = fastssl(&["pairs", "--num-positives", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
