use std::path::Path;
use std::process::{Command, Output};

use lagkit::manifest::{DatasetManifest, ManifestEntry};

fn lagkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lagkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_images(dir: &Path) -> DatasetManifest {
    let mut entries = Vec::new();
    for class in 0..2u32 {
        for i in 0..4u32 {
            let img = image::GrayImage::from_fn(72, 64, |x, y| {
                let v = if class == 0 {
                    ((x + i) / 6 % 2) * 180 + (y % 7) * 5
                } else {
                    ((x + y + 2 * i) / 5 % 2) * 200 + (x % 3) * 10
                };
                image::Luma([v as u8])
            });
            let name = format!("c{class}_{i}.png");
            img.save(dir.join(&name)).unwrap();
            entries.push(ManifestEntry {
                id: format!("c{class}_{i}"),
                label: format!("c{class}"),
                path: name.into(),
                kind: None,
            });
        }
    }
    let m = DatasetManifest {
        root: ".".into(),
        classes: vec!["c0".into(), "c1".into()],
        entries,
    };
    m.save(&dir.join("manifest.json")).unwrap();
    m
}

const CONFIG: &str = r#"{
  "descriptor": {"patch_sizes": [16, 24], "step": 8, "pca_dim": 10},
  "components": 4,
  "em": {"max_iterations": 20},
  "nap_rank": 2,
  "split": {"train_per_class": 2, "trials": 2},
  "threads": 2
}"#;

#[test]
fn image_artifacts_flow_between_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_images(d);
    let cfg = d.join("run.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let manifest = d.join("manifest.json");

    ok(&["train-ubm", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&d.join("ubm.lagm")), "--pca-out", p(&d.join("pca.lagc"))]);
    let text = ok(&["inspect", p(&d.join("ubm.lagm"))]);
    assert!(text.contains("K = 4") && text.contains("D = 12"), "{text}");
    assert!(text.contains("min std >= floor: true"), "{text}");
    assert!(ok(&["inspect", p(&d.join("pca.lagc"))]).contains("output dim = 10"));

    ok(&["extract", "--manifest", p(&manifest), "--config", p(&cfg), "--pca", p(&d.join("pca.lagc")), "--out", p(&d.join("patches"))]);
    assert!(ok(&["inspect", p(&d.join("patches/c0_0.lagp"))]).contains("D = 12"));

    ok(&["vectorize", "--manifest", p(&manifest), "--config", p(&cfg), "--ubm", p(&d.join("ubm.lagm")), "--pca", p(&d.join("pca.lagc")), "--out", p(&d.join("vec"))]);
    ok(&["vectorize", "--manifest", p(&d.join("patches/manifest.json")), "--config", p(&cfg), "--ubm", p(&d.join("ubm.lagm")), "--method", "klvec", "--out", p(&d.join("vec_kl"))]);
    let v = ok(&["inspect", p(&d.join("vec/c1_3.lagv"))]);
    assert!(v.contains("length = 480"), "{v}");
    assert!(ok(&["inspect", p(&d.join("vec_kl/c1_3.lagv"))]).contains("length = 240"));

    ok(&["nap-train", "--manifest", p(&d.join("vec/manifest.json")), "--config", p(&cfg), "--out", p(&d.join("nap.lagn"))]);
    assert!(ok(&["inspect", p(&d.join("nap.lagn"))]).contains("dim = 480"));
    let acc = ok(&["classify", "--train", p(&d.join("vec/manifest.json")), "--test", p(&d.join("vec/manifest.json")), "--nap", p(&d.join("nap.lagn")), "--out", p(&d.join("pred.csv"))]);
    assert!(acc.starts_with("accuracy"));
    let preds = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    assert_eq!(preds.lines().count(), 9);

    ok(&["evaluate", "--manifest", p(&manifest), "--config", p(&cfg), "--methods", "lag,rlag", "--out", p(&d.join("eval"))]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval/report_rlag.json")).unwrap()).unwrap();
    assert_eq!(report["accuracies"].as_array().unwrap().len(), 2);
    assert!(d.join("eval/confusion_lag.csv").exists());
}

#[test]
fn synth_then_evaluate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    std::fs::write(&spec, r#"{"classes": 3, "items_per_class": 8, "patches_per_item": 60, "dim": 4}"#).unwrap();
    ok(&["synth", "--out", p(d), "--spec", p(&spec)]);
    let cfg = d.join("run.json");
    let args = |out: &str, threads: &str| {
        vec![
            "evaluate".to_string(), "--manifest".into(), p(&d.join("manifest.json")).into(), "--config".into(),
            p(&cfg).into(), "--components".into(), "4".into(), "--threads".into(), threads.into(), "--out".into(),
            p(&d.join(out)).into(),
        ]
    };
    let run = |out: &str, threads: &str| {
        let a = args(out, threads);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
        std::fs::read(d.join(out).join("report_lag.json")).unwrap()
    };
    let first = run("a", "1");
    assert_eq!(first, run("b", "1"));
    assert_eq!(first, run("c", "3"));
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["accuracies"].as_array().unwrap().len(), 10);

    let sweep = ok(&["sweep-k", "--manifest", p(&d.join("manifest.json")), "--config", p(&cfg), "--grid", "2,4", "--out", p(&d.join("sweep.json"))]);
    assert!(sweep.contains("klvec"));
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.json");
    std::fs::write(&bad, r#"{"adaptation": {"relevance": -1}}"#).unwrap();
    let out = lagkit(&["evaluate", "--manifest", "x.json", "--config", p(&bad), "--out", p(d)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("adaptation.relevance"));

    let out = lagkit(&["inspect", p(&d.join("missing.lagm"))]);
    assert_eq!(out.status.code(), Some(3));

    let model = lagkit::DiagonalGmm::new(
        ndarray::array![1.0],
        ndarray::array![[0.0, 1.0]],
        ndarray::array![[1.0, 2.0]],
    )
    .unwrap();
    let bytes = lagkit::io::encode_gmm(&model).unwrap();
    std::fs::write(d.join("cut.lagm"), &bytes[..bytes.len() - 4]).unwrap();
    let out = lagkit(&["inspect", p(&d.join("cut.lagm"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated container"));

    let mut future = bytes.clone();
    future[4] = 2;
    std::fs::write(d.join("future.lagm"), &future).unwrap();
    let out = lagkit(&["inspect", p(&d.join("future.lagm"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported version"));
}
