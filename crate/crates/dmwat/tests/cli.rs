//! End-to-end checks of the `dmwat` binary: artifact contracts, seeded
//! determinism, and distinct failure modes with nonzero exits.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmwat"))
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join(format!("dmwat-cli-{}", std::process::id()))
        .join(tag);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, dataset: &Path, out: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 5,
        "dataset": dataset,
        "out_dir": out,
        "k_folds": 2,
        "head": "svm",
        "modality": "fused",
        "tta_views": 1,
        "epochs": {"teacher": 2, "vision": 1, "text_mlm": 0, "text": 1, "head": 30},
        "learning_rate": 1e-3,
        "vision": {"patch_size": 8, "embed_dim": 16, "num_layers": 1, "num_heads": 2,
                   "distillation_alpha": 0.5, "distillation_mode": "hard", "soft_temperature": 3.0},
        "text": {"embed_dim": 16, "num_layers": 1, "num_heads": 2, "max_len": 16,
                 "relative_bucket_k": 4, "emd_layers": 1},
        "augmentation": {"balance": "none", "policies": ["flip_h", "brightness"],
                         "mixup_prob": 0.0, "cutmix_prob": 0.0},
        "normalize_fusion": false
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn gen_data_is_seed_deterministic() {
    let base = work_dir("gen");
    for tag in ["a", "b"] {
        run_ok(bin().args([
            "gen-data",
            "--out",
            base.join(tag).to_str().unwrap(),
            "--cases",
            "60",
            "--seed",
            "7",
        ]));
    }
    let a = std::fs::read(base.join("a/dataset.jsonl")).unwrap();
    let b = std::fs::read(base.join("b/dataset.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 60);
}

#[test]
fn evaluate_twice_yields_byte_identical_metrics() {
    let base = work_dir("eval");
    run_ok(bin().args([
        "gen-data",
        "--out",
        base.join("data").to_str().unwrap(),
        "--cases",
        "45",
        "--seed",
        "3",
    ]));
    let cfg = write_config(&base, &base.join("data/dataset.jsonl"), &base.join("run-a"));
    run_ok(bin().args(["evaluate", "--config", cfg.to_str().unwrap()]));
    run_ok(bin().args([
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        base.join("run-b").to_str().unwrap(),
    ]));
    let a = std::fs::read(base.join("run-a/metrics.json")).unwrap();
    let b = std::fs::read(base.join("run-b/metrics.json")).unwrap();
    assert_eq!(a, b);
    assert!(base.join("run-a/table.txt").exists());
}

#[test]
fn train_predict_explain_chain() {
    let base = work_dir("chain");
    run_ok(bin().args([
        "gen-data",
        "--out",
        base.join("data").to_str().unwrap(),
        "--cases",
        "45",
        "--seed",
        "9",
    ]));
    let cfg = write_config(&base, &base.join("data/dataset.jsonl"), &base.join("run"));
    run_ok(bin().args(["train", "--config", cfg.to_str().unwrap()]));
    let ckpt = base.join("run/model.ckpt");
    assert!(ckpt.exists());
    assert!(base.join("run/vocab.json").exists());

    // predict: one decision in {1,2,3} plus 3 scores
    let out = run_ok(bin().args([
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--case-id",
        "case-00001",
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("decision 1") || text.contains("decision 2") || text.contains("decision 3"),
        "{text}"
    );
    assert!(text.matches(',').count() >= 2, "{text}");

    // predict with voting
    run_ok(bin().args([
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--case-id",
        "case-00001",
        "--tta",
        "5",
    ]));

    // explain both modalities
    run_ok(bin().args([
        "explain",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--case-id",
        "case-00002",
        "--modality",
        "image",
        "--out",
        base.join("explain").to_str().unwrap(),
    ]));
    assert!(base.join("explain/case-00002_saliency.ppm").exists());
    assert!(base.join("explain/case-00002_saliency_overlay.png").exists());
    run_ok(bin().args([
        "explain",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--case-id",
        "case-00002",
        "--modality",
        "text",
        "--steps",
        "32",
        "--out",
        base.join("explain").to_str().unwrap(),
    ]));
    assert!(base.join("explain/case-00002_attribution.json").exists());
    assert!(base.join("explain/case-00002_attribution.html").exists());
}

#[test]
fn augment_materializes_balanced_dataset() {
    let base = work_dir("augment");
    run_ok(bin().args([
        "gen-data",
        "--out",
        base.join("data").to_str().unwrap(),
        "--cases",
        "30",
        "--seed",
        "2",
    ]));
    let cfg = write_config(&base, &base.join("data/dataset.jsonl"), &base.join("unused"));
    let out = run_ok(bin().args([
        "augment",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        base.join("balanced").to_str().unwrap(),
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("materialized"), "{text}");
    let cases = dmwat::data::load_dataset(&base.join("balanced/dataset.jsonl")).unwrap();
    let hist = dmwat::data::class_histogram(&cases);
    assert_eq!(hist[0], hist[1]);
    assert_eq!(hist[1], hist[2]);
    // the output directory stands alone: every referenced image exists in it
    for case in &cases {
        assert!(base.join("balanced").join(&case.image_path).exists(), "{}", case.case_id);
    }
}

#[test]
fn failures_exit_nonzero_with_distinct_messages() {
    // missing config file
    let out = bin()
        .args(["evaluate", "--config", "/definitely/not/here.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not/here.json"));

    // malformed config: unknown field, canonical example printed
    let base = work_dir("badcfg");
    let bad = base.join("bad.json");
    std::fs::write(&bad, r#"{"surprise": true}"#).unwrap();
    let out = bin()
        .args(["evaluate", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("canonical config example"), "{stderr}");

    // unknown flag
    let out = bin().args(["evaluate", "--nonsense"]).output().unwrap();
    assert!(!out.status.success());

    // unknown subcommand
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert!(!out.status.success());
}
