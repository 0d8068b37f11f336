//! End-to-end command-line contract tests on miniature configurations.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_worldstring"));
    c.env("RUST_LOG", "warn").env("WORLDSTRING_THREADS", "2");
    c
}

/// A miniature experiment document that keeps debug-mode runs fast.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "seed": 7,
        "object": {"kind": "chain", "links": 2, "link_length": 0.4, "radius": 0.1,
                    "points": 800, "joint_limit": 1.2},
        "state": {"kind": "uniform_joints"},
        "frames": 6,
        "train_frames": 4,
        "keypoints": 5,
        "res": 16,
        "sensor": null,
        "arch": {"tokens": 8, "token_dim": 8, "state_dim": 16, "object_dim": 16,
                  "layers": 1, "pe_frequencies": 4},
        "train": {"steps": 30, "lr": 0.002, "batch_frames": 1, "points_per_frame": 32,
                   "balance": 0.5, "seed": 7, "checkpoint_every": 0},
        "eval": {"threshold": 0.5}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn generate_is_deterministic_and_sensor_emits_both_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    for name in ["a", "b"] {
        let st = bin()
            .args(["generate", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(tmp.path().join(name))
            .args(["--sensor", "--cameras", "2"])
            .status()
            .unwrap();
        assert!(st.success());
    }
    let a = dir_bytes(&tmp.path().join("a"));
    let b = dir_bytes(&tmp.path().join("b"));
    assert_eq!(a, b, "same seed must produce identical directories");

    // Both GT and sensor grids present, one per frame.
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let gt = names.iter().filter(|n| n.ends_with(".vox") && !n.contains("sensor")).count();
    let sensor = names.iter().filter(|n| n.ends_with(".sensor.vox")).count();
    assert_eq!(gt, 6);
    assert_eq!(sensor, 6);
}

#[test]
fn unknown_spec_and_bad_config_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["generate", "--spec", "starfish", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&st.stderr);
    assert!(msg.contains("starfish"), "stderr: {msg}");

    // Unknown config keys are config errors too.
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "bogus_field": true}"#).unwrap();
    let st = bin()
        .args(["generate", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(tmp.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));

    // Missing required flag is a usage error (clap exits 2).
    let st = bin().arg("generate").output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn train_eval_baseline_visualize_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    assert!(bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());

    // Train.
    let run = tmp.path().join("run");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap()
        .success());
    let ckpt = run.join("checkpoint.wsck");
    assert!(ckpt.exists());
    let csv = std::fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    assert!(csv.starts_with("step,loss\n"));
    assert_eq!(csv.lines().count(), 31, "header plus one line per step");
    assert!(run.join("config.json").exists(), "config echoed");

    // Eval with error maps.
    let eval_dir = tmp.path().join("eval");
    assert!(bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&eval_dir)
        .args(["--split", "held", "--train-frames", "4", "--error-map"])
        .status()
        .unwrap()
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["split"], "held");
    assert_eq!(report["per_frame"].as_array().unwrap().len(), 2);
    assert!(report["aggregate"]["iou"].is_number());
    assert!(report["checkpoint_bytes"].as_u64().unwrap() > 0);
    assert!(eval_dir.join("error_map_00004.ply").exists());
    assert!(eval_dir.join("error_map_00005.ply").exists());

    // Baseline: budget line equals checkpoint size.
    let base_dir = tmp.path().join("baseline");
    let out = bin()
        .args(["baseline", "--dataset"])
        .arg(&data)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(&base_dir)
        .args(["--method", "nn", "--train-frames", "4"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(base_dir.join("report.json")).unwrap())
            .unwrap();
    let ckpt_bytes = std::fs::metadata(&ckpt).unwrap().len();
    assert_eq!(report["budget_bytes"].as_u64().unwrap(), ckpt_bytes);
    assert!(report["store_bytes"].as_u64().unwrap() <= ckpt_bytes);
    assert!(base_dir.join("store/store_manifest.json").exists());

    // Unknown method is a usage error.
    let st = bin()
        .args(["baseline", "--dataset"])
        .arg(&data)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(tmp.path().join("bogus"))
        .args(["--method", "superNN"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));

    // Visualize.
    let viz = tmp.path().join("viz");
    assert!(bin()
        .args(["visualize", "--checkpoint"])
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&viz)
        .args(["--frame", "4", "--error-map", "--attribution"])
        .status()
        .unwrap()
        .success());
    assert!(viz.join("prediction.ply").exists());
    assert!(viz.join("error_map.ply").exists());
    assert!(viz.join("attribution.ply").exists());
}

#[test]
fn zero_lr_training_has_flat_loss_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    assert!(bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let run = tmp.path().join("run0");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .args(["--lr", "0", "--steps", "8", "--batch-frames", "1"])
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    let losses: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 8);
    // Frozen parameters: every step re-scores the same untrained model on
    // fresh samples — no trend, only sampling noise.
    let first: f64 = losses[..4].iter().sum::<f64>() / 4.0;
    let last: f64 = losses[4..].iter().sum::<f64>() / 4.0;
    assert!(
        (first - last).abs() < 0.2,
        "loss trended under lr=0: {losses:?}"
    );
    // Stronger check: a second zero-lr run is byte-identical.
    let run2 = tmp.path().join("run1");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&run2)
        .args(["--lr", "0", "--steps", "8", "--batch-frames", "1"])
        .status()
        .unwrap()
        .success());
    assert_eq!(
        std::fs::read(run.join("checkpoint.wsck")).unwrap(),
        std::fs::read(run2.join("checkpoint.wsck")).unwrap()
    );
}

#[test]
fn resume_continues_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    assert!(bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let run1 = tmp.path().join("r1");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&run1)
        .args(["--steps", "5"])
        .status()
        .unwrap()
        .success());
    let run2 = tmp.path().join("r2");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&run2)
        .args(["--steps", "5", "--resume"])
        .arg(run1.join("checkpoint_resume.wsck"))
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(run2.join("loss_curve.csv")).unwrap();
    let first_step: u64 = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(first_step, 6, "resumed run continues the counter");
}
