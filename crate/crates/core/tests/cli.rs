use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn onfly(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onfly"))
        .args(args)
        .output()
        .expect("run onfly")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small dataset: 4 subjects, 2 sequences per class.
fn small_data(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("data.json");
    let o = onfly(&["gen", "--subjects", "4", "--out", s(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--out", s(out), "--seed", "5"];
    args.extend_from_slice(extra);
    onfly(&args)
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        assert!(onfly(&["gen", "--seed", "4", "--out", s(p)])
            .status
            .success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.json.manifest.json").exists());
    let c = dir.path().join("c.json");
    assert!(onfly(&["gen", "--seed", "5", "--out", s(&c)])
        .status
        .success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn gen_config_with_missing_field_names_it() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(
        &cfg,
        r#"{"num_classes": 3, "feature_dim": 4, "subjects": 2, "sequences_per_subject_per_class": 1,
            "min_len": 5, "max_len": 8, "subject_offset_stddev": 0.0,
            "min_prototype_distance": 0.3, "seed": 1}"#,
    )
    .unwrap();
    let o = onfly(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("d.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise_stddev"), "{}", stderr(&o));
}

#[test]
fn invalid_learning_rate_exits_with_config_error() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir);
    for lr in ["0", "-0.1"] {
        let o = train(&data, &dir.path().join("out"), &["--lr", lr]);
        assert_eq!(o.status.code(), Some(2), "lr {lr}");
        assert!(stderr(&o).contains("base_lr"), "{}", stderr(&o));
    }
    assert!(!dir.path().join("out").join("checkpoint.json").exists());
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir);
    let cfg = dir.path().join("t.json");
    std::fs::write(&cfg, r#"{"epochz": 3}"#).unwrap();
    let o = train(&data, &dir.path().join("out"), &["--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn missing_data_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = train(&dir.path().join("nope.json"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn train_writes_artifacts_and_no_e3_skips_the_phase() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir);
    let full = dir.path().join("full");
    let o = train(&data, &full, &["--epochs", "3", "--holdout-fold", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "checkpoint.json",
        "train_log.csv",
        "train_config.json",
        "manifest.json",
    ] {
        assert!(full.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(full.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,phase,e1,e2,e3,total,lr,heldout_accuracy")
    );
    let phases: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(phases, ["e1e2", "e3", "e1e2", "e3", "e1e2", "e3"]);

    let no_e3 = dir.path().join("no_e3");
    assert!(train(&data, &no_e3, &["--epochs", "3", "--no-e3"])
        .status
        .success());
    let log = std::fs::read_to_string(no_e3.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("e1e2")));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir);
    let whole = dir.path().join("whole");
    let o = train(
        &data,
        &whole,
        &[
            "--epochs",
            "4",
            "--momentum",
            "0.9",
            "--checkpoint-every",
            "2",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let half = whole.join("checkpoint_epoch2.json");
    assert!(half.exists());

    let resumed = dir.path().join("resumed");
    let o = train(
        &data,
        &resumed,
        &["--epochs", "4", "--momentum", "0.9", "--resume", s(&half)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(whole.join("checkpoint.json")).unwrap(),
        std::fs::read(resumed.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn eval_writes_curves_and_rejects_mismatched_data() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir);
    let model = dir.path().join("model");
    assert!(train(&data, &model, &["--epochs", "2"]).status.success());
    let ckpt = model.join("checkpoint.json");

    let ev = dir.path().join("eval");
    let o = onfly(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--holdout-fold",
        "1",
        "--out",
        s(&ev),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let thresholds = std::fs::read_to_string(ev.join("threshold_curve.csv")).unwrap();
    let mut lines = thresholds.lines();
    assert_eq!(lines.next(), Some("theta,rate,correct,total"));
    assert_eq!(lines.count(), 11);
    let sim = std::fs::read_to_string(ev.join("similarity_curve.csv")).unwrap();
    assert_eq!(
        sim.lines().next(),
        Some("class_id,bin,time,mean_similarity,count")
    );
    // 4 classes by 20 bins
    assert_eq!(sim.lines().count(), 1 + 4 * 20);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("summary.json")).unwrap()).unwrap();
    assert!(summary["sequence_accuracy"]["rate"].as_f64().is_some());

    let other = dir.path().join("other.json");
    assert!(onfly(&[
        "gen",
        "--subjects",
        "2",
        "--feature-dim",
        "5",
        "--out",
        s(&other)
    ])
    .status
    .success());
    let o = onfly(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&other),
        "--out",
        s(&dir.path().join("e2")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("feature dim"), "{}", stderr(&o));
}

#[test]
fn gradcheck_reports_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("g.json");
    let o = onfly(&[
        "gradcheck",
        "--seeds",
        "2",
        "--literal-eq5",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.matches(" ok").count(), 4, "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(json["literal_e2"]["max_relative_error"].as_f64().unwrap() > 1e-2);

    let o = onfly(&["gradcheck", "--seeds", "1", "--epsilon", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn experiment_writes_comparison_tables() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir);
    let out = dir.path().join("exp");
    let o = onfly(&[
        "experiment",
        "--data",
        s(&data),
        "--seeds",
        "2",
        "--epochs",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = std::fs::read_to_string(out.join("threshold_comparison.csv")).unwrap();
    let header = t.lines().next().unwrap();
    assert!(
        header.starts_with("theta,e1_mean,e1e2_mean,e1e2e3_mean"),
        "{header}"
    );
    assert_eq!(t.lines().count(), 12);
    let sim = std::fs::read_to_string(out.join("similarity_comparison.csv")).unwrap();
    assert_eq!(sim.lines().count(), 21);
    for v in ["e1", "e1e2", "e1e2e3"] {
        for seed in 0..2 {
            assert!(out
                .join("checkpoints")
                .join(format!("{v}_seed{seed}.json"))
                .exists());
        }
    }
}
