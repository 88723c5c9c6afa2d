use std::fs;
use std::path::Path;
use std::process::Command;

use mixforge::data::{generate_synthetic, import_batch, write_cifar_binary, CifarVariant, SyntheticSpec};
use mixforge::trainer::{compute_mce, load_checkpoint};
use mixforge::Error;
use mixforge_cli::{cmd_ablate_k, cmd_augment, cmd_eval, cmd_train, initial_model, load_config, RunConfig};
use serde_json::{json, Value};

fn synthetic_config(out: &Path, side: usize, k: usize, epochs: usize) -> Value {
    let stages = if k == 1 { json!([]) } else { json!([{ "kind": "stackmix", "k": k }]) };
    json!({
        "version": 1,
        "dataset": {
            "source": "synthetic",
            "spec": { "n_classes": 4, "samples_per_class": 8, "image_size": side, "noise_std": 0.2 },
            "train_seed": 1,
            "test_seed": 2
        },
        "pipeline": {
            "base": [{ "kind": "horizontal_flip", "params": { "p": 0.5 } }],
            "stages": stages
        },
        "optimizer": { "lr": 0.05, "momentum": 0.9, "epochs": epochs, "batch_size": 8 },
        "model": { "hidden": [8] },
        "seed": 11,
        "out_dir": out,
        "inference": "self_concat",
        "k": k
    })
}

fn write_config(dir: &Path, name: &str, value: &Value) -> RunConfig {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    load_config(&path).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn augment_zero_count_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "c.json", &synthetic_config(&out, 4, 2, 1));
    assert!(cmd_augment(&config, 0).unwrap().is_empty());
    assert!(!out.exists());
}

#[test]
fn augment_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let config = write_config(dir.path(), "c.json", &synthetic_config(&out, 4, 2, 1));
        let manifests = cmd_augment(&config, 3).unwrap();
        assert_eq!(manifests.len(), 3);
        outputs.push(
            manifests
                .iter()
                .flat_map(|m| ["images.npy", "labels.npy", "manifest.txt"].map(|f| read(&m.dir.join(f))))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn stackmix_on_cifar_files_exports_tall_images() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_classes: 10,
        samples_per_class: 2,
        image_size: 32,
        channels: 3,
        noise_std: 0.1,
        background: 0.2,
        signal: 0.8,
    };
    let ds = generate_synthetic(&spec, 5).unwrap();
    fs::write(dir.path().join("data_batch_1.bin"), write_cifar_binary(&ds, CifarVariant::Cifar10).unwrap()).unwrap();
    fs::write(dir.path().join("test_batch.bin"), write_cifar_binary(&ds, CifarVariant::Cifar10).unwrap()).unwrap();
    let mut value = synthetic_config(&dir.path().join("out"), 32, 2, 1);
    value["dataset"] = json!({
        "source": "cifar",
        "variant": "cifar10",
        "train": ["data_batch_1.bin"],
        "test": ["test_batch.bin"]
    });
    let config = write_config(dir.path(), "c.json", &value);
    let manifests = cmd_augment(&config, 1).unwrap();
    let (images, labels) = import_batch(&manifests[0].dir).unwrap();
    assert_eq!(images.shape(), &[8, 64, 32, 3]);
    assert_eq!(labels.shape(), &[8, 10]);
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &synthetic_config(&dir.path().join("out"), 4, 2, 0));
    let trained = cmd_train(&config).unwrap();
    let init = initial_model(&config, &config.datasets().unwrap().train).unwrap();
    assert_eq!(trained.model, init);
    assert_eq!(load_checkpoint(&dir.path().join("out/checkpoint")).unwrap(), init);
    assert!(read(&dir.path().join("out/metrics.jsonl")).is_empty());
}

#[test]
fn training_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let config = write_config(dir.path(), "c.json", &synthetic_config(&out, 4, 2, 3));
        cmd_train(&config).unwrap();
        logs.push((read(&out.join("metrics.jsonl")), read(&out.join("checkpoint/layer0_weight.npy"))));
    }
    assert_eq!(logs[0], logs[1]);
    let text = String::from_utf8(logs[0].0.clone()).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let record: Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "lr", "train_loss", "test_error", "mode"] {
            assert!(record.get(key).is_some(), "{key} missing in {line}");
        }
    }
}

#[test]
fn ssl_with_zero_weight_matches_supervised_labeled_subset() {
    let dir = tempfile::tempdir().unwrap();
    let mut ssl = synthetic_config(&dir.path().join("ssl"), 4, 2, 3);
    ssl["ssl"] = json!({ "consistency_weight": 0.0, "labeled_per_batch": 8, "unlabeled_per_batch": 8, "labeled_count": 16 });
    let ssl = write_config(dir.path(), "ssl.json", &ssl);
    let mut sup = synthetic_config(&dir.path().join("sup"), 4, 2, 3);
    sup["dataset"]["spec"]["samples_per_class"] = json!(4);
    sup["dataset"]["test_samples_per_class"] = json!(8);
    let sup = write_config(dir.path(), "sup.json", &sup);
    assert_eq!(
        ssl.datasets().unwrap().train.images(),
        sup.datasets().unwrap().train.images(),
        "labeled subset must be the supervised training set"
    );
    let a = cmd_train(&ssl).unwrap();
    let b = cmd_train(&sup).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
}

#[test]
fn eval_reports_clean_and_corrupted_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut value = synthetic_config(&out, 4, 2, 2);
    let config = write_config(dir.path(), "c.json", &value);
    cmd_train(&config).unwrap();
    let checkpoint = out.join("checkpoint");

    let clean = cmd_eval(&config, &checkpoint).unwrap();
    assert!(clean.corruption_errors.is_empty());
    assert_eq!(clean.mce, None);
    assert_eq!(clean.header(), vec!["mode", "clean"]);

    value["corruptions"] = json!([
        { "kind": "gaussian_noise", "severity": 5 },
        { "kind": "contrast", "severity": 2 },
        { "kind": "gaussian_noise", "severity": 5 }
    ]);
    let config = write_config(dir.path(), "c.json", &value);
    let report = cmd_eval(&config, &checkpoint).unwrap();
    assert_eq!(report.clean_error, clean.clean_error);
    let errors: Vec<f64> = report.corruption_errors.iter().map(|(_, e)| *e).collect();
    assert_eq!(report.corruption_errors[0], report.corruption_errors[2]);
    assert_eq!(report.mce, Some(compute_mce(&errors).unwrap()));
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(csv.starts_with("mode,clean,gaussian_noise_s5,contrast_s2,gaussian_noise_s5,mce"));
}

#[test]
fn eval_rejects_checkpoint_with_other_k() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "c.json", &synthetic_config(&out, 4, 2, 1));
    cmd_train(&config).unwrap();
    let single = write_config(dir.path(), "single.json", &synthetic_config(&out, 4, 1, 1));
    assert!(matches!(cmd_eval(&single, &out.join("checkpoint")), Err(Error::Shape(_))));
}

#[test]
fn ablation_k1_row_matches_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &synthetic_config(&dir.path().join("abl"), 4, 1, 2));
    let rows = cmd_ablate_k(&config, &[1]).unwrap();
    let trained = cmd_train(&config).unwrap();
    let report = cmd_eval(&config, &dir.path().join("abl/checkpoint")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].eval, report);
    assert_eq!(rows[0].final_train_loss, trained.log.last().map(|m| m.train_loss));
}

#[test]
fn ablation_shapes_and_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &synthetic_config(&dir.path().join("abl"), 32, 2, 1));
    let rows = cmd_ablate_k(&config, &[1, 2, 3, 5, 2]).unwrap();
    for row in &rows {
        assert_eq!(row.input_shape, (32 * row.k, 32, 1));
        let (images, _) = import_batch(&dir.path().join(format!("abl/k_{}/batch_00000", row.k))).unwrap();
        assert_eq!(images.shape()[1], 32 * row.k);
    }
    assert_eq!(rows[1], rows[4]);
    let csv = fs::read_to_string(dir.path().join("abl/ablate_k.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn inconsistent_k_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = synthetic_config(&dir.path().join("out"), 4, 2, 1);
    value["k"] = json!(3);
    let path = dir.path().join("c.json");
    fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(load_config(&path), Err(Error::Config(_))));
    value["k"] = json!(2);
    value["inference"] = json!("flip_concat");
    fs::write(&path, value.to_string()).unwrap();
    assert!(load_config(&path).is_ok());
    value["inference"] = json!("mean_of_flips");
    fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(load_config(&path), Err(Error::Config(_))));
}

fn mixforge() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixforge"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, synthetic_config(&dir.path().join("out"), 4, 2, 1).to_string()).unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"version\": 1 }").unwrap();

    let status = |args: &[&str], threads: Option<&str>| {
        let mut cmd = mixforge();
        cmd.args(args).current_dir(dir.path());
        if let Some(t) = threads {
            cmd.env("MIXFORGE_THREADS", t);
        }
        cmd.output().unwrap().status.code().unwrap()
    };
    assert_eq!(status(&["train", "--config", "good.json"], None), 0);
    assert_eq!(status(&["eval", "--config", "good.json", "--checkpoint", "out/checkpoint"], None), 0);
    assert_eq!(status(&["train", "--config", "bad.json"], None), 2);
    assert_eq!(status(&["train", "--config", "missing.json"], None), 3);
    assert_eq!(status(&["eval", "--config", "good.json", "--checkpoint", "nowhere"], None), 3);
    assert_eq!(status(&["train", "--config", "good.json"], Some("zero")), 2);
    assert_eq!(status(&["augment", "--config", "good.json", "--count", "0", "--out", "none"], None), 0);
    assert!(!dir.path().join("none").exists());
}

#[test]
fn binary_seed_and_out_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, synthetic_config(&dir.path().join("default"), 4, 2, 1).to_string()).unwrap();
    for (out, seed) in [("s1", "1"), ("s2", "2"), ("s1b", "1")] {
        let output = mixforge()
            .args(["augment", "--config", "c.json", "--count", "1", "--seed", seed, "--out", out])
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(output.status.success());
    }
    let images = |run: &str| read(&dir.path().join(run).join("batch_00000/images.npy"));
    assert_eq!(images("s1"), images("s1b"));
    assert_ne!(images("s1"), images("s2"));
    assert!(!dir.path().join("default").exists());
}
