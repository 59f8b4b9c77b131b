//! The `wacil` binary: determinism, persisted artifacts and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wacil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wacil")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(
        &path,
        "[dataset]\nkind = \"synthetic\"\nnum_classes = 10\ntrain_per_class = 40\n\n\
         [schedule]\nsteps = 5\nclasses_per_step = 2\n\n[train]\nepochs = 4\n",
    )
    .unwrap();
    path
}

#[test]
fn run_twice_gives_identical_metrics_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = wacil(&["run", "--config", cfg.to_str().unwrap(), "--seed", "7", "--output", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dirs.push(out);
    }
    for rel in ["metrics.csv", "summary.csv", "metrics/step5.json", "checkpoints/step5.json", "memory/step5.json"] {
        let a = fs::read(dirs[0].join(rel)).unwrap();
        let b = fs::read(dirs[1].join(rel)).unwrap();
        assert!(a == b, "{rel} differs");
    }
    let lock = |d: &Path| -> Vec<String> {
        let text = fs::read_to_string(d.join("config.lock")).unwrap();
        text.lines().filter(|l| !l.starts_with("output")).map(String::from).collect()
    };
    assert_eq!(lock(&dirs[0]), lock(&dirs[1]));
    assert!(!dirs[0].join(".lock").exists());
}

#[test]
fn analyze_and_plot_from_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();
    assert!(wacil(&["run", "--config", cfg.to_str().unwrap(), "--output", out_s]).status.success());
    fs::remove_file(out.join("summary.csv")).unwrap();

    let o = wacil(&["analyze", out_s]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    let header = table.lines().next().unwrap();
    assert_eq!(header.split_whitespace().collect::<Vec<_>>(), ["step1", "step2", "step3", "step4", "step5", "last", "average"]);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("metric,step1,step2,step3,step4,step5,last,incremental_average"));

    let o = wacil(&["plot", out_s]);
    assert!(o.status.success());
    assert!(out.join("figures/norms_step3.png").exists());
    assert!(out.join("figures/confusion_step5.png").exists());
}

#[test]
fn plot_without_metrics_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("run");
    assert!(wacil(&["run", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]).status.success());
    fs::remove_dir_all(out.join("metrics")).unwrap();
    let o = wacil(&["plot", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("step1.json"), "{err}");
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[dataset]\nkind = \"synthetic\"\nnum_classes = 10\n[schedule]\nsteps = 6\nclasses_per_step = 2\n").unwrap();
    let o = wacil(&["run", "--config", bad.to_str().unwrap(), "--output", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("12 classes"));

    assert_eq!(wacil(&["run", "--preset", "nope"]).status.code(), Some(1));
    assert_eq!(wacil(&["run", "--preset", "ours", "--override", "train.epochz=2"]).status.code(), Some(1));
    assert_eq!(wacil(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn locked_run_directory_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "").unwrap();
    let o = wacil(&["run", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn preset_list_and_overrides() {
    let o = wacil(&["preset-list"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["variation1", "variation2", "variation3", "variation4", "ours", "upper_bound"] {
        assert!(text.contains(name));
    }

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = wacil(&[
        "run", "--preset", "variation2", "--output", out.to_str().unwrap(),
        "--override", "train.epochs=2", "--override", "dataset.train_per_class=20", "--sequential",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lock = fs::read_to_string(out.join("config.lock")).unwrap();
    assert!(lock.contains("epochs = 2"));
    assert!(lock.contains("use_kd = false"));
    assert!(lock.contains("execution = \"sequential\""));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            wacil::config::parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
