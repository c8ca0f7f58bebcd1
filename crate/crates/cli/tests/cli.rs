use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn inkmotion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inkmotion"))
        .args(args)
        .env_remove("INKMOTION_SEED")
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> serde_json::Value {
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(stdout.lines().count(), 1, "stdout: {stdout}");
    serde_json::from_str(stdout.trim()).unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn synth(dir: &Path, subjects: &str, reps: &str) {
    let out = inkmotion(&[
        "synth",
        "--subjects",
        subjects,
        "--reps",
        reps,
        "--seed",
        "7",
        "--out",
        dir.to_str().unwrap(),
    ]);
    ok(&out);
}

const TINY: &str = r#"{
  "n_features": 16,
  "record_runtime": false,
  "models": {
    "cnn": {"conv_channels": [2, 2, 2], "fc": [4], "epochs": 1, "batch_size": 32},
    "rnn": {"hidden": 2, "epochs": 1, "batch_size": 32},
    "svm": {"iterations": 200}
  },
  "autoencoder": {"epochs": 1}
}"#;

#[test]
fn synth_writes_52_files_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let out = inkmotion(&["synth", "--subjects", "2", "--reps", "1", "--seed", "7", "--out", a.to_str().unwrap()]);
    ok(&out);
    assert_eq!(summary(&out)["sequences"], 52);
    let ta = tree(&a);
    assert_eq!(ta.keys().filter(|k| !k.ends_with("calibration.csv")).count(), 52);
    let b = tmp.path().join("b");
    synth(&b, "2", "1");
    assert_eq!(ta, tree(&b));
}

#[test]
fn synth_into_unwritable_path_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    fs::write(&file, "x").unwrap();
    let target = file.join("d");
    let out = inkmotion(&["synth", "--subjects", "1", "--reps", "1", "--out", target.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    assert!(out.stdout.is_empty());
}

#[test]
fn run_knn_writes_report_and_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3", "2");
    let out_dir = tmp.path().join("out");
    let out = inkmotion(&[
        "run",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--model",
        "knn",
        "--features",
        "20",
    ]);
    ok(&out);
    let s = summary(&out);
    assert_eq!(s["model"], "knn");
    assert!(s["test_acc"].as_f64().unwrap() > 1.0 / 26.0);
    for f in ["report.json", "confusion.csv", "curves.csv", "model/knn.json", "model/knn.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert!(!out_dir.join("curves.svg").exists());

    let again = tmp.path().join("again");
    let out = inkmotion(&[
        "report",
        "--input",
        out_dir.join("report.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    ok(&out);
    assert_eq!(
        fs::read(out_dir.join("confusion.csv")).unwrap(),
        fs::read(again.join("confusion.csv")).unwrap()
    );
}

#[test]
fn overrides_win_over_config_and_show_in_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5", "1");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let out_dir = tmp.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_inkmotion"))
        .args([
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--model",
            "rnn",
            "--split",
            "subject",
            "--ae",
            "on",
        ])
        .env("INKMOTION_SEED", "42")
        .output()
        .unwrap();
    ok(&out);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["model"], "rnn");
    assert_eq!(report["config"]["split"]["kind"], "subject");
    assert_eq!(report["config"]["seed"], 42);
    assert_eq!(report["config"]["n_features"], 16);
    assert_eq!(report["config"]["autoencoder"]["epochs"], 1);
    assert!(out_dir.join("curves.svg").exists());
    assert!(out_dir.join("model/rnn.ckpt").exists());
    assert!(out_dir.join("autoencoders/ae_yaw.ckpt").exists());
}

#[test]
fn bad_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "1", "1");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"models": {"cnn": {"epochz": 3}}}"#).unwrap();
    let out = inkmotion(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("models.cnn") && err.contains("epochz"), "{err}");
}

#[test]
fn missing_dataset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = inkmotion(&[
        "run",
        "--dataset",
        tmp.path().join("nope").to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn knn_ablation_table_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5", "1");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_features": 16, "ablation": {"models": ["knn"], "seeds": [1, 2]}}"#).unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = inkmotion(&[
            "ablate",
            "--config",
            cfg.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        ok(&out);
        assert_eq!(summary(&out)["cells"], 4);
        dir
    };
    let a = run("a");
    let csv = fs::read_to_string(a.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,split,aug,ae,train_acc,test_acc");
    assert_eq!(lines.len(), 3);
    assert_eq!(tree(&a), tree(&run("b")));
}

#[test]
fn ablation_with_only_failing_cells_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "1", "1");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_features": 16, "ablation": {"models": ["knn"]}, "split": {"ratios": [34, 33, 33]}}"#).unwrap();
    let out = inkmotion(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    // random split of 26 rows succeeds, the subject split cannot
    ok(&out);
    assert_eq!(summary(&out)["failed"], 1);

    fs::write(&cfg, r#"{"n_features": 16, "ablation": {"models": ["knn"]}, "models": {"knn": {"k": 500}}}"#).unwrap();
    let out = inkmotion(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("o2").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("every ablation cell failed"));
}

#[test]
fn stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "1", "1");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();
    let rows = tmp.path().join("rows.csv");
    let out = inkmotion(&["preprocess", "--config", c, "--dataset", data.to_str().unwrap(), "--out", rows.to_str().unwrap()]);
    ok(&out);
    assert_eq!(summary(&out)["rows"], 26);
    let aug = tmp.path().join("aug.csv");
    let out = inkmotion(&["augment", "--config", c, "--input", rows.to_str().unwrap(), "--out", aug.to_str().unwrap()]);
    ok(&out);
    assert_eq!(summary(&out)["rows_out"], 26 * 5);
    let ae = tmp.path().join("ae");
    let out = inkmotion(&["train-ae", "--config", c, "--input", aug.to_str().unwrap(), "--out", ae.to_str().unwrap()]);
    ok(&out);
    assert_eq!(summary(&out)["final_loss"].as_array().unwrap().len(), 3);
    for ch in ["yaw", "pitch", "roll"] {
        assert!(ae.join(format!("ae_{ch}.ckpt")).exists());
    }
}
