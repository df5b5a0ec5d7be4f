use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use reqadapt_cli::report::MetricsFile;

const TINY: &str = r#"
seed = 3
tasks = ["type", "severity"]
[corpus]
n_labeled = 200
n_unlabeled = 100
n_generic = 150
[model]
layers = 1
hidden = 16
heads = 2
ff = 32
max_len = 24
[pretrain]
max_epochs = 1
[adapt]
max_epochs = 1
[finetune]
max_epochs = 1
[baselines]
embedding_width = 8
embedding_epochs = 1
[sweep]
lrs = [2e-5, 1e-4]
"#;

fn tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path
}

fn reqadapt(args: &[&str], out: &Path, config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reqadapt"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_run_writes_every_artifact_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = reqadapt(&["full"], out, &cfg);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["metrics.json", "comparison.txt", "data/labeled.jsonl", "data/vocab.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let metrics: MetricsFile = serde_json::from_slice(&fs::read(a.join("metrics.json")).unwrap()).unwrap();
    let labels: Vec<&str> = metrics.table.rows.iter().map(|r| r.variant.label()).collect();
    assert_eq!(labels, ["Majority", "Pooling", "Frozen-sentence", "Encoder", "Encoder+adapted"]);
    assert!(metrics.table.rows.iter().all(|r| r.cells.len() == 2));
    assert_eq!(metrics.table.significance.len(), 2);
    let text = fs::read_to_string(a.join("comparison.txt")).unwrap();
    assert!(text.starts_with(&format!("config {} seed 3", metrics.stamp.config_hash)), "{text}");
    for f in ["reports/adaptation.json", "reports/train-pretrain.json", "run_record.json", "data/splits.json"] {
        let body = fs::read_to_string(a.join(f)).unwrap();
        assert!(body.contains(&metrics.stamp.config_hash), "{f} lacks the config hash");
    }
}

#[test]
fn staged_commands_match_and_evaluate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("run");
    for args in [&["generate"][..], &["pretrain"], &["adapt"]] {
        let o = reqadapt(args, &out, &cfg);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let adapted = out.join("checkpoints/adapted.ckpt");
    let o = reqadapt(&["finetune", "--task", "type", "--checkpoint", adapted.to_str().unwrap()], &out, &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let from_finetune: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();

    let ckpt = out.join("checkpoints/finetuned-encoder-adapted-type.ckpt");
    let preds = out.join("predictions/encoder-adapted-type.jsonl");
    for path in [&ckpt, &preds] {
        let o = reqadapt(&["evaluate", "--task", "type", "--checkpoint", path.to_str().unwrap()], &out, &cfg);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["accuracy"], from_finetune["accuracy"]);
        assert_eq!(v["macro_f1"], from_finetune["macro_f1"]);
    }
    let o = reqadapt(&["evaluate", "--task", "severity", "--checkpoint", ckpt.to_str().unwrap()], &out, &cfg);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = reqadapt(&["finetune", "--task", "type", "--checkpoint", ckpt.to_str().unwrap()], &out, &cfg);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_writes_a_curve_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("run");
    for args in [&["generate"][..], &["pretrain"], &["sweep", "--task", "type"]] {
        let o = reqadapt(args, &out, &cfg);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for f in ["curve-2e-5.json", "curve-1e-4.json", "summary.json", "summary.txt"] {
        assert!(out.join("sweep").join(f).exists(), "{f}");
    }
    let curve: serde_json::Value = serde_json::from_slice(&fs::read(out.join("sweep/curve-1e-4.json")).unwrap()).unwrap();
    assert!(!curve["step_losses"].as_array().unwrap().is_empty());
    assert!(curve["stamp"]["config_hash"].is_string());
}

#[test]
fn missing_artifacts_exit_3_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("empty");
    let o = reqadapt(&["pretrain"], &out, &cfg);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("labeled.jsonl"), "{}", stderr(&o));

    assert!(reqadapt(&["generate"], &out, &cfg).status.success());
    let o = reqadapt(&["adapt"], &out, &cfg);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("pretrained.ckpt"), "{}", stderr(&o));

    let o = reqadapt(&["generate"], &out, &dir.path().join("nope.toml"));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[compare]\nalpha = 2.0\nbogus = 1\n");
    let o = reqadapt(&["generate"], &dir.path().join("run"), &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let path = dir.path().join("many.toml");
    fs::write(&path, "tasks = []\n[finetune]\nlr = 1.0\n").unwrap();
    let o = reqadapt(&["generate"], &dir.path().join("run"), &path);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("tasks must not be empty") && msg.contains("adaptation rate"), "{msg}");
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("run");
    assert!(reqadapt(&["generate"], &out, &cfg).status.success());
    let hot = dir.path().join("hot.toml");
    fs::write(&hot, TINY.replace("[pretrain]\n", "[pretrain]\nlr = 1e12\n")).unwrap();
    let o = reqadapt(&["pretrain"], &out, &hot);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn out_dir_comes_from_the_environment_without_a_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_reqadapt"))
        .args(["--config", cfg.to_str().unwrap(), "generate"])
        .env("REQADAPT_OUT", &out)
        .env("REQADAPT_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("data/manifest.json").exists());
}
