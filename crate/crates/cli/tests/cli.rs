//! End-to-end CLI behavior: exit codes, file outputs, reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prefiqs"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{
  "n_identities": 5, "samples_per_identity": 6, "input_dim": 12, "embedding_dim": 6,
  "noise_levels": [0.0, 0.5], "seed": 3,
  "arch": [12, 16, 6], "epochs": 15, "lr": 0.1, "train_seed": 5
}"#,
    )
    .unwrap();
    path
}

struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn synth() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let out = run(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("synth").to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Pipeline { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn p(&self, rel: &str) -> String {
        self.path(rel).to_str().unwrap().to_string()
    }
}

#[test]
fn synth_writes_dataset_model_and_manifest() {
    let pl = Pipeline::synth();
    assert!(pl.path("synth/dataset.csv").is_file());
    assert!(pl.path("synth/model.pfqm").is_file());
    assert!(pl.path("synth/manifest.json").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("synth/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "synth");
    assert!(manifest["parameters"]["config"]["epochs"].is_number());
}

#[test]
fn synth_is_byte_reproducible() {
    let pl = Pipeline::synth();
    let cfg = pl.p("tiny.json");
    let out = run(&["synth", "--config", &cfg, "--out", &pl.p("again")]);
    assert!(out.status.success());
    for file in ["dataset.csv", "model.pfqm"] {
        let a = std::fs::read(pl.path(&format!("synth/{file}"))).unwrap();
        let b = std::fs::read(pl.path(&format!("again/{file}"))).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn bad_ratio_exits_2() {
    let pl = Pipeline::synth();
    let out = run(&[
        "prune",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--ratio",
        "1.5",
        "--criterion",
        "l1",
        "--granularity",
        "unstructured",
        "--out",
        &pl.p("x.pfqm"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn random_without_seed_exits_2() {
    let pl = Pipeline::synth();
    let out = run(&[
        "prune",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--ratio",
        "0.4",
        "--criterion",
        "random",
        "--granularity",
        "unstructured",
        "--out",
        &pl.p("x.pfqm"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_3() {
    let pl = Pipeline::synth();
    let out = run(&[
        "score",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--pruned",
        &pl.p("synth/model.pfqm"),
        "--inputs",
        &pl.p("nonexistent.csv"),
        "--out",
        &pl.p("scores.csv"),
        "--rho",
        "0.4",
        "--criterion",
        "l1",
        "--granularity",
        "unstructured",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unwritable_out_dir_exits_3() {
    let pl = Pipeline::synth();
    let cfg = pl.p("tiny.json");
    let out = run(&["synth", "--config", &cfg, "--out", "/proc/definitely/not/writable"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn dimension_mismatch_exits_4() {
    let pl = Pipeline::synth();
    // A second model with a different embedding dimension.
    std::fs::write(
        pl.path("other.json"),
        r#"{
  "n_identities": 5, "samples_per_identity": 6, "input_dim": 12, "embedding_dim": 4,
  "noise_levels": [0.0], "seed": 3,
  "arch": [12, 16, 4], "epochs": 1, "lr": 0.1, "train_seed": 5
}"#,
    )
    .unwrap();
    let out = run(&["synth", "--config", &pl.p("other.json"), "--out", &pl.p("other")]);
    assert!(out.status.success());
    let out = run(&[
        "score",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--pruned",
        &pl.p("other/model.pfqm"),
        "--inputs",
        &pl.p("synth/dataset.csv"),
        "--out",
        &pl.p("scores.csv"),
        "--rho",
        "0.4",
        "--criterion",
        "l1",
        "--granularity",
        "unstructured",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn corrupt_model_exits_4() {
    let pl = Pipeline::synth();
    std::fs::write(pl.path("junk.pfqm"), b"XXXX not a model").unwrap();
    let out = run(&[
        "prune",
        "--model",
        &pl.p("junk.pfqm"),
        "--ratio",
        "0.4",
        "--criterion",
        "l1",
        "--granularity",
        "unstructured",
        "--out",
        &pl.p("x.pfqm"),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn structured_prune_emits_plan_and_reduced_model() {
    let pl = Pipeline::synth();
    let out = run(&[
        "prune",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--ratio",
        "0.3",
        "--criterion",
        "l1",
        "--granularity",
        "structured",
        "--out",
        &pl.p("struct.pfqm"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pl.path("struct.pfqm").is_file());
    assert!(pl.path("struct.plan.json").is_file());
    assert!(!pl.path("struct.pfqmask").exists());
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("struct.plan.json")).unwrap())
            .unwrap();
    assert!(plan["removals"].as_array().is_some());
}

#[test]
fn score_uses_mask_sidecar_for_provenance() {
    let pl = Pipeline::synth();
    let out = run(&[
        "prune",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--ratio",
        "0.4",
        "--criterion",
        "l1",
        "--granularity",
        "unstructured",
        "--out",
        &pl.p("pruned.pfqm"),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "score",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--pruned",
        &pl.p("pruned.pfqm"),
        "--inputs",
        &pl.p("synth/dataset.csv"),
        "--out",
        &pl.p("scores.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("scores.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["parameters"]["rho"], 0.4);
}

#[test]
fn identity_pruning_scores_quality_one() {
    let pl = Pipeline::synth();
    // Pruned model == original model: every quality is exactly 1.
    let out = run(&[
        "score",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--pruned",
        &pl.p("synth/model.pfqm"),
        "--inputs",
        &pl.p("synth/dataset.csv"),
        "--out",
        &pl.p("scores.csv"),
        "--rho",
        "0.4",
        "--criterion",
        "l1",
        "--granularity",
        "unstructured",
    ]);
    assert!(out.status.success());
    let content = std::fs::read_to_string(pl.path("scores.csv")).unwrap();
    let rows = prefiqs_core::scoring::read_scores_csv(&content).unwrap();
    assert_eq!(rows.len(), 30);
    for row in rows {
        assert_eq!(row.drift, 0.0);
        assert_eq!(row.quality, 1.0);
    }
}

#[test]
fn jvp_report_has_correlation_fields() {
    let pl = Pipeline::synth();
    let out = run(&[
        "jvp",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--inputs",
        &pl.p("synth/dataset.csv"),
        "--out",
        &pl.p("jvp.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("jvp.report.json")).unwrap())
            .unwrap();
    assert!(report["spearman"].is_number());
    assert!(report["spearman_defined"].as_bool().unwrap());
    assert!(report["step_halving_max_rel_diff"].is_number());
    assert!(report["first_order_valid"].is_boolean());
}

#[test]
fn jvp_ratio_rounding_to_empty_mask_reports_degenerate() {
    let pl = Pipeline::synth();
    // N is in the hundreds; a vanishing ratio rounds to zero removals, so
    // every pair is (0, 0) and the correlation is undefined.
    let out = run(&[
        "jvp",
        "--model",
        &pl.p("synth/model.pfqm"),
        "--ratio",
        "0.0000001",
        "--inputs",
        &pl.p("synth/dataset.csv"),
        "--out",
        &pl.p("jvp.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("jvp.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["degenerate"], true);
    assert!(report["spearman"].is_null());
    assert_eq!(report["spearman_defined"], false);
}

#[test]
fn edc_insufficient_impostors_is_flagged_not_fatal() {
    let pl = Pipeline::synth();
    let groups: Vec<Vec<String>> = vec![
        vec![
            "pairs".into(),
            "--dataset".into(),
            pl.p("synth/dataset.csv"),
            "--out".into(),
            pl.p("pairs.csv"),
        ],
        vec![
            "embed".into(),
            "--model".into(),
            pl.p("synth/model.pfqm"),
            "--inputs".into(),
            pl.p("synth/dataset.csv"),
            "--out".into(),
            pl.p("emb.csv"),
        ],
    ];
    for group in &groups {
        let argv: Vec<&str> = group.iter().map(String::as_str).collect();
        let out = run(&argv);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&[
        "score",
        "--model", &pl.p("synth/model.pfqm"),
        "--pruned", &pl.p("synth/model.pfqm"),
        "--inputs", &pl.p("synth/dataset.csv"),
        "--out", &pl.p("scores.csv"),
        "--rho", "0.4", "--criterion", "l1", "--granularity", "unstructured",
    ]);
    assert!(out.status.success());
    // 75 impostors and fmr 1e-3 -> floor = 0 -> reject-all sentinel.
    let out = run(&[
        "edc",
        "--embeddings", &pl.p("emb.csv"),
        "--pairs", &pl.p("pairs.csv"),
        "--scores", &pl.p("scores.csv"),
        "--fmr", "0.001",
        "--out", &pl.p("edc.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("edc.summary.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["insufficient_impostors"], true);
    assert!(sidecar["threshold"].is_null());
}

#[test]
fn bad_threads_env_exits_2() {
    let pl = Pipeline::synth();
    let out = bin()
        .args([
            "embed",
            "--model",
            &pl.p("synth/model.pfqm"),
            "--inputs",
            &pl.p("synth/dataset.csv"),
            "--out",
            &pl.p("emb.csv"),
        ])
        .env("PREFIQS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
