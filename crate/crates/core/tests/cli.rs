use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "version": 1,
  "seed": 3,
  "dataset": {"kind": "blobs", "classes": 2, "per_class": 30, "test_per_class": 30, "dim": 3, "separation": 3.0},
  "clustering": {"per_class": 2},
  "model": {"architecture": {"kind": "mlp", "hidden": [8]}},
  "train": {"lr_net": 0.1, "epochs": 8, "batch_size": 60},
  "distill": {"steps": 10},
  "attribution": {"queries": 6},
  "diagnostics": {"validation": 20, "percentages": [0, 25], "random_trials": 2, "fidelity_clusters": 2}
}"#;

fn ddm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddm")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(text: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("config.json");
    std::fs::write(&cfg, text).unwrap();
    let out = d.path().join("out");
    (d, cfg, out)
}

fn run(verb: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![verb, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ddm(&args)
}

const VERBS: [&str; 7] = ["cluster", "train", "distill", "evaluate", "oracle", "diagnose", "report"];

#[test]
fn full_pipeline_then_cache_hit() {
    let (_d, cfg, out) = setup(CONFIG);
    for v in VERBS {
        let o = run(v, &cfg, &out, &[]);
        assert_eq!(code(&o), 0, "{v}: {}", stderr(&o));
    }
    let scores = std::fs::read_to_string(out.join("evaluate/attribution.csv")).unwrap();
    assert_eq!(scores.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);
    for v in ["cluster", "train", "distill", "evaluate"] {
        let o = run(v, &cfg, &out, &[]);
        assert_eq!(code(&o), 0);
        assert!(stderr(&o).contains("cached"), "{v}: {}", stderr(&o));
    }
    for f in ["report/summary.txt", "report/timing.csv", "report/avg_dist.csv", "report/sweep.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn report_is_byte_identical_over_unchanged_artifacts() {
    let (_d, cfg, out) = setup(CONFIG);
    for v in VERBS {
        assert_eq!(code(&run(v, &cfg, &out, &[])), 0);
    }
    let read = |f: &str| std::fs::read(out.join("report").join(f)).unwrap();
    let before: Vec<Vec<u8>> = ["summary.txt", "timing.csv", "avg_dist.csv", "attribution_by_class.csv"]
        .iter()
        .map(|f| read(f))
        .collect();
    assert_eq!(code(&ddm(&["report", "--out", out.to_str().unwrap()])), 0);
    let after: Vec<Vec<u8>> = ["summary.txt", "timing.csv", "avg_dist.csv", "attribution_by_class.csv"]
        .iter()
        .map(|f| read(f))
        .collect();
    assert_eq!(before, after);
}

#[test]
fn changed_config_is_refused_without_force() {
    let (_d, cfg, out) = setup(CONFIG);
    assert_eq!(code(&run("cluster", &cfg, &out, &[])), 0);
    let o = run("cluster", &cfg, &out, &["--seed", "4"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let o = run("cluster", &cfg, &out, &["--seed", "4", "--force"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("cluster/assignments.csv")).unwrap();
    assert!(text.starts_with("# config_hash=") && text.lines().next().unwrap().ends_with("seed=4"));
}

#[test]
fn missing_upstream_artifact_exits_3() {
    let (_d, cfg, out) = setup(CONFIG);
    let o = run("evaluate", &cfg, &out, &[]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("stamp.json"), "{}", stderr(&o));
    assert_eq!(code(&run("cluster", &cfg, &out, &[])), 0);
    assert_eq!(code(&run("train", &cfg, &out, &[])), 0);
    let o = run("evaluate", &cfg, &out, &[]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("distill"), "{}", stderr(&o));
}

#[test]
fn report_on_empty_directory_exits_3() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&ddm(&["report", "--out", d.path().to_str().unwrap()])), 3);
}

#[test]
fn input_errors_exit_2() {
    let o = ddm(&["cluster", "--config", "/nonexistent/cfg.json", "--out", "/tmp/x"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/nonexistent/cfg.json"));

    let (_d, cfg, out) = setup(&CONFIG.replace("\"seed\": 3,", "\"seed\": 3, \"sede\": 1,"));
    let o = run("cluster", &cfg, &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));

    let idx = CONFIG.replace(
        r#"{"kind": "blobs", "classes": 2, "per_class": 30, "test_per_class": 30, "dim": 3, "separation": 3.0}"#,
        r#"{"kind": "idx", "train_images": "missing-images.gz", "train_labels": "l", "test_images": "ti", "test_labels": "tl"}"#,
    );
    let (_d2, cfg, out) = setup(&idx);
    let o = run("cluster", &cfg, &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing-images.gz"), "{}", stderr(&o));
}
