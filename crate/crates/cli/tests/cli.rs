use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_covifex");

fn covifex(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_extract_grid_train_predict() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let images = root.join("images");
    let feats = root.join("features/Stub.cvfx");
    let reports = root.join("reports");
    let best = root.join("best.cvmd");

    let out = covifex(&["synth", "--out", p(&images), "--per-class", "12"]);
    assert!(out.status.success());
    let manifest = images.join("manifest.csv");
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 25);

    let out = covifex(&["extract", "--manifest", p(&manifest), "--extractor", "stub", "--out", p(&feats)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("features/Stub.extract.json").is_file());

    let out = covifex(&[
        "grid",
        "--features-dir",
        p(&root.join("features")),
        "--classifiers",
        "decision_tree,bagging",
        "--k",
        "4",
        "--out",
        p(&reports),
        "--export-model",
        p(&best),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("report checksum"));
    for m in ["accuracy", "precision", "recall", "f1", "timing"] {
        assert!(reports.join(format!("report_{m}.csv")).is_file(), "{m}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("best.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["extractor"], "Stub");
    assert_eq!(manifest["cv"]["k"], 4);

    let out = covifex(&["predict", "--model", p(&best), "--image", p(&images.join("img_0001.png"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(resp["threshold"], 0.5);
    assert_eq!(resp["model"]["report_checksum"], manifest["report_checksum"]);

    let rf = root.join("rf.cvmd");
    let out = covifex(&["train", "--features", p(&feats), "--classifier", "random_forest", "--n-estimators", "10", "--out", p(&rf)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("rf.manifest.json").is_file());
}

#[test]
fn exit_codes_separate_validation_from_io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cvmd");
    let out = covifex(&["predict", "--model", p(&missing), "--image", p(&missing)]);
    assert_eq!(out.status.code(), Some(3));

    let out = covifex(&["grid", "--features-dir", p(dir.path()), "--k", "1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = covifex(&["synth", "--out", p(dir.path()), "--per-class", "3"]);
    assert!(out.status.success());
    let manifest = dir.path().join("manifest.csv");
    let out = covifex(&["extract", "--manifest", p(&manifest), "--extractor", "AlexNet", "--out", p(&dir.path().join("x.cvfx"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown extractor"));

    let out = covifex(&["extract", "--manifest", p(&manifest), "--extractor", "DenseNet121", "--out", p(&dir.path().join("x.cvfx"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model-file"));
}
