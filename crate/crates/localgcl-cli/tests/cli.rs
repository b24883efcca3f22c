//! End-to-end tests of the `localgcl` binary: artifact layout, config and
//! flag plumbing, exit codes, and the ablation CSV workflow. Every run here
//! uses a handful of epochs so the whole file stays fast.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use localgcl_cli::config::KNOWN_KEYS;

fn data_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_localgcl"))
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.conf");
    fs::write(
        &path,
        format!(
            "dataset.name = MUTAG\ndataset.dir = {}\nlog.wall_ms = false\n{extra}",
            data_root().display()
        ),
    )
    .expect("write config");
    path
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn train_writes_exactly_three_artifacts_and_a_complete_manifest() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), "train.epochs = 2\n");
    let out_dir = tmp.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&conf)
        .args(["--seed", "7", "--out"])
        .arg(&out_dir)
        .output()
        .expect("spawn");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["manifest.json", "metrics.ndjson", "model.ckpt"]);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7, "--seed must override the config seed");
    let config = manifest["config"].as_object().expect("config map");
    for key in KNOWN_KEYS {
        assert!(config.contains_key(*key), "manifest config is missing {key}");
    }
    assert_eq!(config["train.epochs"], "2");
    assert_eq!(config["seed"], "7");
    let artifacts = manifest["artifacts"].as_object().expect("artifact map");
    assert_eq!(artifacts.len(), 3);

    // Two epochs means exactly two metrics lines.
    let metrics = fs::read_to_string(out_dir.join("metrics.ndjson")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn set_flag_overrides_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), "train.epochs = 5\n");
    let out_dir = tmp.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&conf)
        .args(["--set", "train.epochs=2", "--out"])
        .arg(&out_dir)
        .output()
        .expect("spawn");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let metrics = fs::read_to_string(out_dir.join("metrics.ndjson")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "--set train.epochs=2 must win over the file");
}

#[test]
fn unknown_config_key_exits_2_with_line_number() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), "train.epochs = 2\nno.such.key = 1\n");
    let out = bin().args(["train", "--config"]).arg(&conf).output().expect("spawn");
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("no.such.key"), "stderr: {err}");
    assert!(err.contains("line 5"), "stderr should name the offending line: {err}");
}

#[test]
fn malformed_set_value_exits_2_and_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), "train.epochs = 2\n");
    let out = bin()
        .args(["train", "--config"])
        .arg(&conf)
        .args(["--set", "tau=banana"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("tau"), "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_dataset_exits_3() {
    let tmp = TempDir::new().unwrap();
    let conf = tmp.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "dataset.name = NO_SUCH_SET\ndataset.dir = {}\ntrain.epochs = 2\nlog.wall_ms = false\n",
            data_root().display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("NO_SUCH_SET"), "stderr: {}", stderr_of(&out));
}

#[test]
fn numerical_divergence_exits_4_and_names_the_epoch() {
    let tmp = TempDir::new().unwrap();
    // A denormal temperature sends 1/tau to infinity on the first batch.
    let conf = write_config(tmp.path(), "train.epochs = 1\ntau = 5e-324\n");
    let out = bin()
        .args(["train", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("epoch 0"), "stderr: {}", stderr_of(&out));
}

fn train_small_checkpoint(tmp: &TempDir) -> PathBuf {
    let conf = write_config(tmp.path(), "train.epochs = 2\n");
    let out_dir = tmp.path().join("ckpt-run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .expect("spawn");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    out_dir.join("model.ckpt")
}

#[test]
fn eval_rejects_degenerate_fold_count() {
    let tmp = TempDir::new().unwrap();
    let ckpt = train_small_checkpoint(&tmp);
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .args(["--dataset", "MUTAG", "--data-dir"])
        .arg(data_root())
        .args(["--k", "1"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn eval_honors_the_data_dir_environment_variable() {
    let tmp = TempDir::new().unwrap();
    let ckpt = train_small_checkpoint(&tmp);
    let json = tmp.path().join("report.json");
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .args(["--dataset", "MUTAG", "--seeds", "2", "--json"])
        .arg(&json)
        .env_remove("LOCALGCL_DATA_DIR")
        .env("LOCALGCL_DATA_DIR", data_root())
        .current_dir(tmp.path()) // no ./data here: the env var must resolve it
        .output()
        .expect("spawn");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["dataset"], "MUTAG");
    assert_eq!(report["k"], 10);
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    let text = stdout_of(&out);
    assert!(text.contains("MUTAG"), "stdout: {text}");
}

#[test]
fn probe_with_zero_ratios_reports_zero_displacement() {
    let tmp = TempDir::new().unwrap();
    let ckpt = train_small_checkpoint(&tmp);
    let out = bin()
        .args(["probe", "--checkpoint-cl"])
        .arg(&ckpt)
        .arg("--checkpoint-mm")
        .arg(&ckpt)
        .args(["--dataset", "MUTAG", "--data-dir"])
        .arg(data_root())
        .args(["--local-ratio", "0", "--global-ratio", "0"])
        .output()
        .expect("spawn");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    // Identical checkpoints and zero-strength perturbations: both rows print
    // 0.0000 displacement under both columns.
    let zero_rows = text
        .lines()
        .filter(|l| {
            (l.starts_with("contrastive") || l.starts_with("masked"))
                && l.matches("0.0000").count() == 2
        })
        .count();
    assert_eq!(zero_rows, 2, "stdout: {text}");

    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(ckpt.parent().unwrap().join("probe_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["contrastive"]["local_mean"], 0.0);
    assert_eq!(report["masked"]["global_mean"], 0.0);
}

#[test]
fn probe_rejects_out_of_range_ratio() {
    let tmp = TempDir::new().unwrap();
    let ckpt = train_small_checkpoint(&tmp);
    let out = bin()
        .args(["probe", "--checkpoint-cl"])
        .arg(&ckpt)
        .arg("--checkpoint-mm")
        .arg(&ckpt)
        .args(["--dataset", "MUTAG", "--data-dir"])
        .arg(data_root())
        .args(["--local-ratio", "1.5"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn ablate_writes_sweep_csv_then_reuses_it_for_the_comparison() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), "train.epochs = 2\n");
    let out_dir = tmp.path().join("ablation");

    let sweep = bin()
        .args(["ablate", "--config"])
        .arg(&conf)
        .args(["--mode", "static-sweep", "--seeds", "2", "--out"])
        .arg(&out_dir)
        .output()
        .expect("spawn");
    assert!(sweep.status.success(), "stderr: {}", stderr_of(&sweep));
    let csv = fs::read_to_string(out_dir.join("static_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12, "header + 11 lambda rows:\n{csv}");
    assert!(csv.starts_with("lambda,mean_acc,std\n"));

    let compare = bin()
        .args(["ablate", "--config"])
        .arg(&conf)
        .args(["--mode", "dynamic-compare", "--seeds", "2", "--out"])
        .arg(&out_dir)
        .output()
        .expect("spawn");
    assert!(compare.status.success(), "stderr: {}", stderr_of(&compare));
    assert!(
        stdout_of(&compare).contains("reusing"),
        "second pass should reuse the sweep: {}",
        stdout_of(&compare)
    );
    let cmp = fs::read_to_string(out_dir.join("dynamic_compare.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 4, "header + 3 schedule rows:\n{cmp}");
    assert!(cmp.contains("incremental") && cmp.contains("decremental"));
    assert!(cmp.contains("static("), "comparison includes the best static row:\n{cmp}");
}
