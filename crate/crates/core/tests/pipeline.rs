use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ddm::datahub::read_assignments;
use ddm::nets::read_checkpoint;
use ddm::pipeline::{Outcome, Pipeline, PipelineConfig, RunOptions, Stage};
use ddm::trainer::{accuracy, retrain_without, train};

fn config(extra: &str) -> PipelineConfig {
    let text = format!(
        r#"{{
      "version": 1,
      "seed": 5,
      "dataset": {{"kind": "blobs", "classes": 3, "per_class": 24, "test_per_class": 30, "dim": 3, "separation": 3.0}},
      "clustering": {{"per_class": 2}},
      "model": {{"architecture": {{"kind": "mlp", "hidden": [8]}}}},
      "train": {{"lr_net": 0.1, "epochs": 6, "batch_size": 72}},
      "distill": {{"steps": 8}},
      "attribution": {{"queries": 5}},
      "diagnostics": {{"validation": 30, "percentages": [0, 20], "random_trials": 3, "fidelity_clusters": 2}}
      {extra}
    }}"#
    );
    PipelineConfig::from_json(&text, Path::new("inline.json")).unwrap()
}

fn pipeline(cfg: PipelineConfig, out: &Path) -> Pipeline {
    Pipeline::new(
        cfg,
        RunOptions {
            out: out.to_path_buf(),
            force: false,
            workers: 1,
        },
    )
    .unwrap()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn is_timing(p: &Path) -> bool {
    p.file_name().unwrap() == "timing.json"
        || p.extension().is_some_and(|e| e == "secs")
        || p.starts_with("report/timing.csv")
        || p.starts_with("report/summary.txt")
}

#[test]
fn equal_configs_give_byte_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(config(""), a.path()).run_all().unwrap();
    pipeline(config(""), b.path()).run_all().unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    let mut compared = 0;
    for (p, bytes) in &fa {
        if !is_timing(p) {
            assert_eq!(bytes, &fb[p], "{}", p.display());
            compared += 1;
        }
    }
    assert!(compared > 20);
}

#[test]
fn text_artifacts_carry_hash_and_seed() {
    let d = tempfile::tempdir().unwrap();
    pipeline(config(""), d.path()).run_all().unwrap();
    for (p, bytes) in files(d.path()) {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        let first = String::from_utf8_lossy(&bytes).lines().next().unwrap_or("").to_string();
        match ext {
            "csv" | "txt" => {
                assert!(first.starts_with('#') && first.contains("_hash=") && first.contains("seed=5"), "{}", p.display())
            }
            "json" if !is_timing(&p) => {
                let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                assert!(v["config_hash"].is_string() && v["seed"] == 5, "{}", p.display());
            }
            _ => {}
        }
    }
}

#[test]
fn rerun_is_a_cache_hit_and_force_recomputes() {
    let d = tempfile::tempdir().unwrap();
    let p = pipeline(config(""), d.path());
    assert_eq!(p.run(Stage::Cluster).unwrap(), Outcome::Computed);
    assert_eq!(p.run(Stage::Cluster).unwrap(), Outcome::Cached);
    let forced = Pipeline::new(
        config(""),
        RunOptions {
            force: true,
            ..p.opts.clone()
        },
    )
    .unwrap();
    assert_eq!(forced.run(Stage::Cluster).unwrap(), Outcome::Computed);
}

#[test]
fn oracle_checkpoints_are_exact_retrains() {
    let d = tempfile::tempdir().unwrap();
    let p = pipeline(config(""), d.path());
    for s in [Stage::Cluster, Stage::Train, Stage::Distill, Stage::Evaluate, Stage::Oracle] {
        p.run(s).unwrap();
    }
    let data = p.load_data().unwrap();
    let m = p.model(&data.train).unwrap();
    let h = read_assignments(&d.path().join("cluster/assignments.csv"), 2).unwrap();
    let mut checked = 0;
    for k in 0..h.num_clusters() {
        let path = d.path().join(format!("oracle/cluster_{k}.ckpt"));
        if path.exists() {
            let (_, params) = read_checkpoint(&path).unwrap();
            assert_eq!(params, retrain_without(&m, &data.train, &h, &[k], &p.cfg.train_config()).unwrap());
            checked += 1;
        }
    }
    assert!(checked >= 2);
}

#[test]
fn sweep_at_zero_percent_is_the_target_model() {
    let d = tempfile::tempdir().unwrap();
    let p = pipeline(config(""), d.path());
    p.run_all().unwrap();
    let data = p.load_data().unwrap();
    let m = p.model(&data.train).unwrap();
    let theta = train(&m, &data.train, &p.cfg.train_config()).unwrap();
    let n = data.test.len() as f64;
    let c = (accuracy(&m, theta.last(), &data.test).unwrap() * n).round();
    let want = 100.0 * (c / n);
    let text = std::fs::read_to_string(d.path().join("diagnose/quality.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .find(|l| l.starts_with("0,"))
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(row[2].to_bits(), want.to_bits());
    assert_eq!(row[3].to_bits(), want.to_bits());
}

#[test]
fn one_cluster_per_class_echoes_the_class_partition() {
    let mut cfg = config("");
    cfg.clustering.per_class = 1;
    let d = tempfile::tempdir().unwrap();
    let p = pipeline(cfg, d.path());
    p.run(Stage::Cluster).unwrap();
    let data = p.load_data().unwrap();
    let h = read_assignments(&d.path().join("cluster/assignments.csv"), 1).unwrap();
    assert_eq!(h.clusters(), data.train.class_indices().as_slice());
}

#[test]
fn hierarchical_evaluate_writes_a_class_synset() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = config("");
    cfg.attribution.hierarchical = true;
    let p = pipeline(cfg, d.path());
    for s in [Stage::Cluster, Stage::Train, Stage::Distill, Stage::Evaluate] {
        p.run(s).unwrap();
    }
    assert!(d.path().join("distill/class_synset.bin").exists());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("evaluate/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["hierarchical"], true);
}

#[test]
fn label_flip_is_reported_by_diagnose() {
    let d = tempfile::tempdir().unwrap();
    let p = pipeline(config(r#", "corruption": {"kind": "label_flip", "fraction": 0.2}"#), d.path());
    p.run_all().unwrap();
    assert!(d.path().join("cluster/corrupted.csv").exists());
    let table = std::fs::read_to_string(d.path().join("diagnose/table.txt")).unwrap();
    assert!(table.contains("corrupted share"), "{table}");
}
